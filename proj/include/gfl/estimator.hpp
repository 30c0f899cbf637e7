#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfl/errors.hpp"

// Pretraining cost estimator. A schedule says what fraction of training runs
// at each sequence length; an efficiency table gives the measured speedup
// factor per (sequence length, rank). The overall factor is the
// schedule-weighted arithmetic mean of the per-length factors, and every
// baseline cost scales down by it. A harmonic (time-weighted) mean is
// available behind a flag but is off by default.

namespace gfl {

struct PretrainSchedule {
    struct Segment {
        std::size_t seq_len;
        double fraction;
    };
    std::vector<Segment> segments;

    void validate() const {
        if (segments.empty()) throw ConfigError("schedule must have at least one segment");
        double sum = 0.0;
        for (const auto& s : segments) {
            if (s.fraction <= 0.0) {
                throw ConfigError("schedule fraction for seq_len " + std::to_string(s.seq_len) +
                                  " must be positive");
            }
            sum += s.fraction;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw ConfigError("schedule fractions must sum to 1, got " + std::to_string(sum));
        }
    }
};

// entries[seq_len][rank] = speedup factor (> 0)
struct EfficiencyTable {
    std::map<std::size_t, std::map<std::size_t, double>> entries;

    double at(std::size_t seq_len, std::size_t rank) const {
        auto row = entries.find(seq_len);
        if (row == entries.end()) {
            throw ConfigError("efficiency table has no row for seq_len " + std::to_string(seq_len));
        }
        auto cell = row->second.find(rank);
        if (cell == row->second.end()) {
            throw ConfigError("efficiency table has no entry for seq_len " + std::to_string(seq_len) +
                              ", rank " + std::to_string(rank));
        }
        if (cell->second <= 0.0) throw ConfigError("efficiency factors must be positive");
        return cell->second;
    }

    std::vector<std::size_t> ranks() const {
        std::vector<std::size_t> out;
        for (const auto& [len, row] : entries) {
            for (const auto& [rank, v] : row) {
                if (std::find(out.begin(), out.end(), rank) == out.end()) out.push_back(rank);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

struct BaselineCost {
    double compute_pfs_day = 0.0;
    double usd_low = 0.0;
    double usd_high = 0.0;
    double co2_kg = 0.0;

    void validate() const {
        if (compute_pfs_day <= 0 || usd_low <= 0 || usd_high <= 0 || co2_kg <= 0) {
            throw ConfigError("baseline costs must be positive");
        }
        if (usd_low > usd_high) throw ConfigError("usd_low must not exceed usd_high");
    }
};

enum class EffMean { arithmetic, harmonic };

// Overall efficiency of running at the given rank over a whole schedule:
// the fraction-weighted mean of the per-length factors.
inline double overall_efficiency(const PretrainSchedule& sched, const EfficiencyTable& table, std::size_t rank,
                                 EffMean mean = EffMean::arithmetic) {
    sched.validate();
    if (mean == EffMean::arithmetic) {
        double eff = 0.0;
        for (const auto& s : sched.segments) eff += s.fraction * table.at(s.seq_len, rank);
        return eff;
    }
    double denom = 0.0;
    for (const auto& s : sched.segments) denom += s.fraction / table.at(s.seq_len, rank);
    return 1.0 / denom;
}

inline BaselineCost scaled_costs(const BaselineCost& base, double eff) {
    base.validate();
    if (eff <= 0.0) throw ConfigError("efficiency factor must be positive, got " + std::to_string(eff));
    return {base.compute_pfs_day / eff, base.usd_low / eff, base.usd_high / eff, base.co2_kg / eff};
}

struct EstimateInput {
    PretrainSchedule schedule;
    EfficiencyTable efficiency;
    BaselineCost baseline;
};

// {"schedule": [{"seq_len":128, "fraction":0.9}, ...],
//  "efficiency": {"128": {"32": 2.8, ...}, ...},
//  "baseline": {"compute_pfs_day":2.24, "usd_low":2074, "usd_high":6912, "co2_kg":652.3}}
inline EstimateInput parse_estimate_input(const nlohmann::json& j) {
    EstimateInput in;
    if (!j.is_object()) throw ConfigError("estimator input must be a JSON object");
    for (const auto& [key, val] : j.items()) {
        if (key != "schedule" && key != "efficiency" && key != "baseline") {
            throw ConfigError("unknown key '" + key + "' in estimator input");
        }
    }
    for (const auto& seg : j.at("schedule")) {
        for (const auto& [key, val] : seg.items()) {
            if (key != "seq_len" && key != "fraction") throw ConfigError("unknown key '" + key + "' in schedule");
        }
        in.schedule.segments.push_back({seg.at("seq_len").get<std::size_t>(), seg.at("fraction").get<double>()});
    }
    for (const auto& [len_str, row] : j.at("efficiency").items()) {
        const std::size_t len = std::stoull(len_str);
        for (const auto& [rank_str, v] : row.items()) {
            in.efficiency.entries[len][std::stoull(rank_str)] = v.get<double>();
        }
    }
    const auto& b = j.at("baseline");
    for (const auto& [key, val] : b.items()) {
        if (key != "compute_pfs_day" && key != "usd_low" && key != "usd_high" && key != "co2_kg") {
            throw ConfigError("unknown key '" + key + "' in baseline");
        }
    }
    in.baseline = {b.at("compute_pfs_day").get<double>(), b.at("usd_low").get<double>(),
                   b.at("usd_high").get<double>(), b.at("co2_kg").get<double>()};
    in.schedule.validate();
    in.baseline.validate();
    return in;
}

struct EstimateRow {
    std::string model;  // "baseline" or "lrt"
    std::size_t rank;   // 0 for the baseline row
    double efficiency;
    BaselineCost cost;
};

// One row per rank in the table, largest rank first (mirroring decreasing
// efficiency), preceded by the unscaled baseline.
inline std::vector<EstimateRow> estimate_costs(const EstimateInput& in, EffMean mean = EffMean::arithmetic) {
    std::vector<EstimateRow> rows;
    rows.push_back({"baseline", 0, 1.0, in.baseline});
    auto ranks = in.efficiency.ranks();
    std::sort(ranks.rbegin(), ranks.rend());
    for (std::size_t rank : ranks) {
        const double eff = overall_efficiency(in.schedule, in.efficiency, rank, mean);
        rows.push_back({"lrt", rank, eff, scaled_costs(in.baseline, eff)});
    }
    return rows;
}

inline void write_estimate_csv(const std::vector<EstimateRow>& rows, std::ostream& out) {
    out << "model,rank,efficiency,compute_pfs_day,usd_low,usd_high,co2_kg\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.model << ',' << r.rank << ',' << r.efficiency << ',' << r.cost.compute_pfs_day << ','
            << r.cost.usd_low << ',' << r.cost.usd_high << ',' << r.cost.co2_kg << "\n";
    }
}

}  // namespace gfl
