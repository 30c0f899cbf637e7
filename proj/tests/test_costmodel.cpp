#include <gtest/gtest.h>

#include "gfl/costmodel.hpp"

using gfl::MemMode;
using gfl::ModelConfig;
using gfl::VariantSpec;

namespace {

const ModelConfig kChapter{768, 12, 3072, 1, 0};  // one layer; stacks scale linearly

std::uint64_t attention_macs(const VariantSpec& spec, std::size_t n) {
    // isolate the attention term by subtracting projections and ff
    const std::uint64_t d = spec.model.d_model;
    const std::uint64_t ff = spec.variant == gfl::Variant::lrt
                                 ? 2ull * n * spec.lowrank->r * (d + spec.model.d_ff)
                                 : 2ull * n * d * spec.model.d_ff;
    const std::uint64_t proj = spec.variant == gfl::Variant::lrt ? 8ull * n * spec.lowrank->r * d : 4ull * n * d * d;
    return gfl::macs_forward(spec, n) - ff - proj;
}

}  // namespace

TEST(MacsForward, ChapterFormulaAnchors) {
    // standard attention term at n=512, d=768: 2 n^2 d
    auto t = VariantSpec::make_transformer(kChapter);
    EXPECT_EQ(attention_macs(t, 512), 402653184u);

    // linformer attention + shortening at n=512, k=64: 4 n k d, 4x fewer
    auto lin = VariantSpec::make_linformer(kChapter, 64, 2048);
    EXPECT_EQ(attention_macs(lin, 512), 100663296u);
    EXPECT_EQ(attention_macs(t, 512), 4 * attention_macs(lin, 512));

    // equality point n = 2k
    EXPECT_EQ(attention_macs(t, 128), 25165824u);
    EXPECT_EQ(attention_macs(lin, 128), 25165824u);
}

TEST(MacsForward, InstrumentedEqualityAcrossVariantsAndConfigs) {
    const ModelConfig small{32, 2, 64, 1, 0};
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_transformer(small), 7));
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_lrt(small, 4), 7));
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_linformer(small, 3, 8), 7));

    const ModelConfig deeper{24, 3, 48, 2, 2};
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_transformer(deeper), 5));
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_lrt(deeper, 5), 5));
    ModelConfig enc_only = deeper;
    enc_only.n_dec_layers = 0;
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_linformer(enc_only, 5, 16), 5, 9));

    const ModelConfig wide{40, 4, 20, 3, 1};
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_transformer(wide), 11));
    EXPECT_NO_THROW(gfl::validate_against_instrumentation(VariantSpec::make_lrt(wide, 10), 11));
}

TEST(MacsForward, FaultInjectionIsDetectedWithComponentDiff) {
    const ModelConfig small{32, 2, 64, 1, 0};
    try {
        gfl::validate_against_instrumentation(VariantSpec::make_transformer(small), 7, 1, +1);
        FAIL() << "expected ValidationError";
    } catch (const gfl::ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("analytic"), std::string::npos) << msg;
        EXPECT_NE(msg.find("measured"), std::string::npos) << msg;
    }
}

TEST(MacsForward, ComplexityShape) {
    // second differences over equally spaced n: constant-positive for
    // quadratic attention, zero for the shortened variant
    auto second_diff = [](const VariantSpec& spec, std::size_t n, std::size_t h) {
        const std::int64_t f0 = static_cast<std::int64_t>(gfl::macs_forward(spec, n));
        const std::int64_t f1 = static_cast<std::int64_t>(gfl::macs_forward(spec, n + h));
        const std::int64_t f2 = static_cast<std::int64_t>(gfl::macs_forward(spec, n + 2 * h));
        return f2 - 2 * f1 + f0;
    };
    auto t = VariantSpec::make_transformer(kChapter);
    auto lrt = VariantSpec::make_lrt(kChapter, 64);
    auto lin = VariantSpec::make_linformer(kChapter, 64, 2048);

    const std::int64_t dt = second_diff(t, 64, 64);
    EXPECT_GT(dt, 0);
    EXPECT_EQ(second_diff(t, 128, 64), dt);
    const std::int64_t dl = second_diff(lrt, 64, 64);
    EXPECT_GT(dl, 0);
    EXPECT_EQ(second_diff(lrt, 128, 64), dl);
    EXPECT_EQ(second_diff(lin, 64, 64), 0);
    EXPECT_EQ(second_diff(lin, 128, 64), 0);
}

TEST(MacsForward, LrtCheaperWheneverEveryMatrixCompresses) {
    for (std::size_t r : {16ul, 64ul, 128ul}) {
        auto lrt = VariantSpec::make_lrt(kChapter, r);
        const bool attn_ok = gfl::LowRankConfig::compresses(r, 768, 768);
        const bool ff_ok = gfl::LowRankConfig::compresses(r, 768, 3072);
        if (attn_ok && ff_ok) {
            for (std::size_t n : {16ul, 128ul, 1024ul}) {
                EXPECT_LT(gfl::macs_forward(lrt, n), gfl::macs_forward(VariantSpec::make_transformer(kChapter), n))
                    << "r=" << r << " n=" << n;
            }
        }
    }
}

TEST(MacsForward, LinformerOvertakesLrtBeyondComputedCrossover) {
    auto lrt = VariantSpec::make_lrt(kChapter, 64);
    auto lin = VariantSpec::make_linformer(kChapter, 64, 1 << 14);
    // compute the crossover instead of assuming it
    std::size_t crossover = 0;
    for (std::size_t n = 1; n <= (1 << 14); ++n) {
        if (gfl::macs_forward(lin, n) < gfl::macs_forward(lrt, n)) {
            crossover = n;
            break;
        }
    }
    ASSERT_GT(crossover, 0u) << "no crossover found";
    EXPECT_LE(crossover, 8192u);
    for (std::size_t n : {crossover, crossover + 100, crossover * 2}) {
        EXPECT_LT(gfl::macs_forward(lin, n), gfl::macs_forward(lrt, n));
    }
    EXPECT_GE(gfl::macs_forward(lin, crossover - 1), gfl::macs_forward(lrt, crossover - 1));
}

TEST(MacsForward, ErrorsAndScaling) {
    auto lin = VariantSpec::make_linformer(kChapter, 64, 512);
    EXPECT_THROW(gfl::macs_forward(lin, 513), gfl::SeqLenError);
    EXPECT_THROW(gfl::macs_forward(VariantSpec::make_transformer(kChapter), 0), gfl::ConfigError);

    auto t = VariantSpec::make_transformer(kChapter);
    EXPECT_EQ(gfl::macs_forward(t, 64, 4), 4 * gfl::macs_forward(t, 64));
    EXPECT_EQ(gfl::macs_forward_backward(t, 64), 3 * gfl::macs_forward(t, 64));
}

TEST(Memory, AttentionCacheTermAndParamBytes) {
    ModelConfig cfg{768, 12, 3072, 2, 0};
    auto t = VariantSpec::make_transformer(cfg);
    EXPECT_EQ(gfl::attention_matrix_cache_bytes(t, 1024, 4), 50331648u);  // 12 * 1024^2 * 4
    auto lin = VariantSpec::make_linformer(cfg, 64, 2048);
    EXPECT_EQ(gfl::attention_matrix_cache_bytes(lin, 1024, 4), 3145728u);  // 12 * 1024 * 64 * 4

    // parameter bytes are exact
    const std::uint64_t params = gfl::count_stack_params(t).total();
    const std::uint64_t infer = gfl::memory_estimate(t, 16, MemMode::infer, 8);
    EXPECT_GT(infer, params * 8);
    auto stack = gfl::build_stack<double>(t, 1);
    EXPECT_EQ(params, stack.params.total_count());
}

TEST(Memory, TrainStrictlyExceedsInfer) {
    for (std::size_t n : {1ul, 16ul, 257ul}) {
        for (int v = 0; v < 3; ++v) {
            ModelConfig cfg{64, 4, 128, 2, v == 2 ? 0ul : 1ul};
            VariantSpec spec = v == 0   ? VariantSpec::make_transformer(cfg)
                               : v == 1 ? VariantSpec::make_lrt(cfg, 8)
                                        : VariantSpec::make_linformer(cfg, 8, 512);
            EXPECT_GT(gfl::memory_estimate(spec, n, MemMode::train, 4),
                      gfl::memory_estimate(spec, n, MemMode::infer, 4))
                << "variant " << v << " n " << n;
        }
    }
}

TEST(Memory, BatchScalesActivationsNotParams) {
    auto t = VariantSpec::make_transformer(ModelConfig{64, 4, 128, 2, 0});
    const std::uint64_t params_bytes = gfl::count_stack_params(t).total() * 4;
    const std::uint64_t m1 = gfl::memory_estimate(t, 32, MemMode::train, 4, 1);
    const std::uint64_t m3 = gfl::memory_estimate(t, 32, MemMode::train, 4, 3);
    EXPECT_EQ(m3 - 2 * params_bytes, 3 * (m1 - 2 * params_bytes));
}

TEST(CostReport, FieldsAreConsistent) {
    auto spec = VariantSpec::make_lrt(ModelConfig{64, 4, 128, 2, 0}, 16);
    auto r = gfl::cost_report(spec, 32, 4);
    EXPECT_EQ(r.rank, 16u);
    EXPECT_EQ(r.macs_fwd_bwd, 3 * r.macs_fwd);
    EXPECT_EQ(r.params, gfl::count_stack_params(spec).total());
    EXPECT_GT(r.mem_train_bytes, r.mem_infer_bytes);
}
