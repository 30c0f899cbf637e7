#include <gtest/gtest.h>

#include <sstream>

#include "gfl/estimator.hpp"

using gfl::BaselineCost;
using gfl::EfficiencyTable;
using gfl::PretrainSchedule;

namespace {

// Per-length factors consistent with the published overall factors
// {32: 2.63, 64: 2.50, 128: 1.98, 256: 1.48} under the 90/10 schedule.
EfficiencyTable reference_table() {
    EfficiencyTable t;
    t.entries[128] = {{32, 2.80}, {64, 2.65}, {128, 2.08}, {256, 1.52}};
    t.entries[512] = {{32, 1.10}, {64, 1.15}, {128, 1.08}, {256, 1.12}};
    return t;
}

PretrainSchedule bert_schedule() { return {{{128, 0.9}, {512, 0.1}}}; }

const BaselineCost kBase{2.24, 2074.0, 6912.0, 652.3};

}  // namespace

TEST(OverallEfficiency, Identities) {
    EfficiencyTable ones;
    ones.entries[128] = {{32, 1.0}};
    ones.entries[512] = {{32, 1.0}};
    EXPECT_DOUBLE_EQ(gfl::overall_efficiency(bert_schedule(), ones, 32), 1.0);

    // single segment passes the factor through
    PretrainSchedule single{{{128, 1.0}}};
    auto table = reference_table();
    EXPECT_DOUBLE_EQ(gfl::overall_efficiency(single, table, 64), 2.65);

    // the documented 90/10 example
    EXPECT_NEAR(gfl::overall_efficiency(bert_schedule(), table, 32), 2.63, 1e-12);
}

TEST(OverallEfficiency, LinearityAndReorderInvariance) {
    auto table = reference_table();
    PretrainSchedule fwd{{{128, 0.9}, {512, 0.1}}};
    PretrainSchedule rev{{{512, 0.1}, {128, 0.9}}};
    EXPECT_DOUBLE_EQ(gfl::overall_efficiency(fwd, table, 64), gfl::overall_efficiency(rev, table, 64));

    // linear in each entry: doubling one cell moves the result by fraction * delta
    auto table2 = table;
    table2.entries[512][64] = 2.30;  // +1.15
    EXPECT_NEAR(gfl::overall_efficiency(fwd, table2, 64) - gfl::overall_efficiency(fwd, table, 64), 0.1 * 1.15,
                1e-12);
}

TEST(OverallEfficiency, Errors) {
    auto table = reference_table();
    PretrainSchedule bad{{{128, 0.5}, {512, 0.1}}};
    EXPECT_THROW(gfl::overall_efficiency(bad, table, 32), gfl::ConfigError);

    PretrainSchedule neg{{{128, -0.1}, {512, 1.1}}};
    EXPECT_THROW(gfl::overall_efficiency(neg, table, 32), gfl::ConfigError);

    EXPECT_THROW(gfl::overall_efficiency(bert_schedule(), table, 999), gfl::ConfigError);
    PretrainSchedule missing_len{{{64, 1.0}}};
    EXPECT_THROW(gfl::overall_efficiency(missing_len, table, 32), gfl::ConfigError);
}

TEST(OverallEfficiency, HarmonicVariantIsBoundedByArithmetic) {
    auto table = reference_table();
    for (std::size_t r : {32ul, 64ul, 128ul, 256ul}) {
        const double a = gfl::overall_efficiency(bert_schedule(), table, r, gfl::EffMean::arithmetic);
        const double h = gfl::overall_efficiency(bert_schedule(), table, r, gfl::EffMean::harmonic);
        EXPECT_LE(h, a) << "r=" << r;
        EXPECT_GT(h, 0.0);
    }
}

TEST(ScaledCosts, IdentityAndErrors) {
    auto same = gfl::scaled_costs(kBase, 1.0);
    EXPECT_DOUBLE_EQ(same.compute_pfs_day, kBase.compute_pfs_day);
    EXPECT_DOUBLE_EQ(same.co2_kg, kBase.co2_kg);
    EXPECT_THROW(gfl::scaled_costs(kBase, 0.0), gfl::ConfigError);
    EXPECT_THROW(gfl::scaled_costs(kBase, -2.0), gfl::ConfigError);
    EXPECT_THROW((BaselineCost{1.0, 10.0, 5.0, 1.0}).validate(), gfl::ConfigError);
}

TEST(ScaledCosts, PublishedAnchors) {
    EXPECT_NEAR(gfl::scaled_costs(kBase, 1.48).compute_pfs_day, 1.52, 0.01);
    EXPECT_NEAR(gfl::scaled_costs(kBase, 2.63).co2_kg, 248.1, 248.1 * 0.01);
}

TEST(ScaledCosts, AllTwelveTableCellsWithinOnePercent) {
    struct Row {
        double eff, compute, usd_low, usd_high, co2;
    };
    const std::vector<Row> expected = {
        {1.48, 1.52, 1406, 4686, 442.2},
        {1.98, 1.13, 1045, 3484, 328.8},
        {2.50, 0.90, 831, 2768, 261.2},
        {2.63, 0.85, 789, 2629, 248.1},
    };
    for (const auto& row : expected) {
        auto got = gfl::scaled_costs(kBase, row.eff);
        EXPECT_NEAR(got.compute_pfs_day, row.compute, row.compute * 0.01) << "eff " << row.eff;
        EXPECT_NEAR(got.usd_low, row.usd_low, row.usd_low * 0.01) << "eff " << row.eff;
        EXPECT_NEAR(got.usd_high, row.usd_high, row.usd_high * 0.01) << "eff " << row.eff;
        EXPECT_NEAR(got.co2_kg, row.co2, row.co2 * 0.01) << "eff " << row.eff;
    }
}

TEST(EstimateInput, JsonParseAndUnknownKeys) {
    const char* text = R"({
      "schedule": [{"seq_len": 128, "fraction": 0.9}, {"seq_len": 512, "fraction": 0.1}],
      "efficiency": {"128": {"32": 2.8}, "512": {"32": 1.1}},
      "baseline": {"compute_pfs_day": 2.24, "usd_low": 2074, "usd_high": 6912, "co2_kg": 652.3}
    })";
    auto in = gfl::parse_estimate_input(nlohmann::json::parse(text));
    EXPECT_EQ(in.schedule.segments.size(), 2u);
    EXPECT_NEAR(gfl::overall_efficiency(in.schedule, in.efficiency, 32), 2.63, 1e-12);

    auto bad = nlohmann::json::parse(text);
    bad["surprise"] = 1;
    EXPECT_THROW(gfl::parse_estimate_input(bad), gfl::ConfigError);

    auto bad2 = nlohmann::json::parse(text);
    bad2["baseline"]["gpu_count"] = 8;
    EXPECT_THROW(gfl::parse_estimate_input(bad2), gfl::ConfigError);
}

TEST(EstimateCosts, RowsMirrorTheTableLayout) {
    gfl::EstimateInput in{bert_schedule(), reference_table(), kBase};
    auto rows = gfl::estimate_costs(in);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0].model, "baseline");
    EXPECT_DOUBLE_EQ(rows[0].efficiency, 1.0);
    // ranks in descending order, efficiency ascending down the table
    EXPECT_EQ(rows[1].rank, 256u);
    EXPECT_EQ(rows[4].rank, 32u);
    EXPECT_NEAR(rows[4].efficiency, 2.63, 1e-12);
    EXPECT_NEAR(rows[4].cost.co2_kg, 248.1, 248.1 * 0.01);

    std::ostringstream os;
    gfl::write_estimate_csv(rows, os);
    const std::string csv = os.str();
    EXPECT_NE(csv.find("model,rank,efficiency,compute_pfs_day,usd_low,usd_high,co2_kg"), std::string::npos);
    EXPECT_NE(csv.find("baseline,0,1,"), std::string::npos);
    EXPECT_NE(csv.find("lrt,32,"), std::string::npos);
}
