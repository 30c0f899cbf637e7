#include <gtest/gtest.h>

#include <cmath>

#include "gfl/attention.hpp"
#include "gfl/blocks.hpp"
#include "gfl/gradcheck.hpp"
#include "gfl/mac_counter.hpp"

using gfl::AttentionMask;
using gfl::ModelConfig;
using gfl::Tensor;
using gfl::Var;
using gfl::VariantSpec;
using D = double;

namespace {

Tensor<D> random_tensor(gfl::Shape shape, gfl::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<D> t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Independent per-element evaluation of softmax(QK^T/sqrt(dk))V.
Tensor<D> sdpa_oracle(const Tensor<D>& q, const Tensor<D>& k, const Tensor<D>& v) {
    const std::size_t nq = q.shape[0], dk = q.shape[1], nk = k.shape[0], dv = v.shape[1];
    Tensor<D> out({nq, dv});
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t i = 0; i < nq; ++i) {
        std::vector<double> logits(nk, 0.0);
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t c = 0; c < dk; ++c) logits[j] += q.data[i * dk + c] * k.data[j * dk + c];
            logits[j] *= inv;
        }
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double z = 0;
        for (double& l : logits) {
            l = std::exp(l - mx);
            z += l;
        }
        for (std::size_t j = 0; j < nk; ++j) {
            for (std::size_t c = 0; c < dv; ++c) out.data[i * dv + c] += (logits[j] / z) * v.data[j * dv + c];
        }
    }
    return out;
}

// Loop-over-heads re-implementation of the full block, written against plain
// arrays so it shares nothing with the library path.
Tensor<D> mha_oracle(const Tensor<D>& xq, const Tensor<D>& xkv, const Tensor<D>& wq, const Tensor<D>& wk,
                     const Tensor<D>& wv, const Tensor<D>& wo, std::size_t heads) {
    const std::size_t n = xq.shape[0], d = xq.shape[1], m = xkv.shape[0], dh = d / heads;
    auto project = [&](const Tensor<D>& x, const Tensor<D>& w) {
        Tensor<D> y({x.shape[0], d});
        for (std::size_t i = 0; i < x.shape[0]; ++i)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t c = 0; c < d; ++c) y.data[i * d + j] += x.data[i * d + c] * w.data[c * d + j];
        return y;
    };
    Tensor<D> q = project(xq, wq), k = project(xkv, wk), v = project(xkv, wv);
    Tensor<D> merged({n, d});
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<D> qh({n, dh}), kh({m, dh}), vh({m, dh});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) qh.data[i * dh + c] = q.data[i * d + h * dh + c];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                kh.data[i * dh + c] = k.data[i * d + h * dh + c];
                vh.data[i * dh + c] = v.data[i * d + h * dh + c];
            }
        Tensor<D> head = sdpa_oracle(qh, kh, vh);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) merged.data[i * d + h * dh + c] = head.data[i * dh + c];
    }
    Tensor<D> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double acc = xq.data[i * d + j];
            for (std::size_t c = 0; c < d; ++c) acc += merged.data[i * d + c] * wo.data[c * d + j];
            out.data[i * d + j] = acc;
        }
        // layer norm with gamma=1, beta=0, eps=1e-5
        double mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += out.data[i * d + j];
        mean /= static_cast<double>(d);
        double var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = out.data[i * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = (out.data[i * d + j] - mean) * inv;
    }
    return out;
}

gfl::ParamStore<D> mha_params(const ModelConfig& cfg, gfl::Rng& rng, const std::string& prefix = "attn") {
    gfl::ParamStore<D> ps;
    const std::size_t d = cfg.d_model;
    for (const char* p : {"q", "k", "v", "o"}) {
        ps.add(prefix + "." + p + ".W", random_tensor({d, d}, rng));
    }
    ps.add(prefix + ".norm.gamma", Tensor<D>::full({d}, 1.0));
    ps.add(prefix + ".norm.beta", Tensor<D>({d}));
    return ps;
}

}  // namespace

TEST(Sdpa, SingletonReturnsValueExactly) {
    gfl::Rng rng(1);
    auto q = gfl::constant(random_tensor({1, 4}, rng));
    auto k = gfl::constant(random_tensor({1, 4}, rng));
    auto v = gfl::constant(random_tensor({1, 3}, rng));
    auto out = gfl::sdpa(q, k, v, AttentionMask::none());
    EXPECT_EQ(out->value.data, v->value.data);
}

TEST(Sdpa, IdenticalKeysAverageValues) {
    gfl::Rng rng(2);
    Tensor<D> krow = random_tensor({1, 4}, rng);
    Tensor<D> k({3, 4});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) k.data[i * 4 + j] = krow.data[j];
    auto q = gfl::constant(random_tensor({2, 4}, rng));
    auto v = gfl::constant(random_tensor({3, 2}, rng));
    auto out = gfl::sdpa(q, gfl::constant(k), v, AttentionMask::none());
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t c = 0; c < 2; ++c) {
            const double mean = (v->value.data[c] + v->value.data[2 + c] + v->value.data[4 + c]) / 3.0;
            EXPECT_NEAR(out->value.data[i * 2 + c], mean, 1e-14);
        }
    }
}

TEST(Sdpa, MatchesBruteForceOracle) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        gfl::Rng rng(seed);
        auto q = gfl::constant(random_tensor({3, 4}, rng));
        auto k = gfl::constant(random_tensor({5, 4}, rng));
        auto v = gfl::constant(random_tensor({5, 4}, rng));
        auto out = gfl::sdpa(q, k, v, AttentionMask::none());
        Tensor<D> expect = sdpa_oracle(q->value, k->value, v->value);
        EXPECT_LT(gfl::max_abs_diff(out->value, expect), 1e-12) << "seed " << seed;
    }
}

TEST(Sdpa, ShapeErrors) {
    gfl::Rng rng(3);
    auto q = gfl::constant(random_tensor({3, 4}, rng));
    auto k5 = gfl::constant(random_tensor({3, 5}, rng));
    auto v = gfl::constant(random_tensor({3, 4}, rng));
    EXPECT_THROW(gfl::sdpa(q, k5, v, AttentionMask::none()), gfl::ShapeError);

    auto k = gfl::constant(random_tensor({3, 4}, rng));
    auto v_wrong_len = gfl::constant(random_tensor({2, 4}, rng));
    EXPECT_THROW(gfl::sdpa(q, k, v_wrong_len, AttentionMask::none()), gfl::ShapeError);
}

TEST(Mha, SingleHeadReducesToSdpaComposition) {
    ModelConfig cfg{6, 1, 12, 1, 0};
    gfl::Rng rng(4);
    auto params = mha_params(cfg, rng);
    auto x = gfl::constant(random_tensor({5, 6}, rng));
    auto out = gfl::mha_forward(x, x, params, cfg, AttentionMask::none());

    auto q = gfl::matmul(x, params.get("attn.q.W"));
    auto k = gfl::matmul(x, params.get("attn.k.W"));
    auto v = gfl::matmul(x, params.get("attn.v.W"));
    auto attn = gfl::sdpa(q, k, v, AttentionMask::none());
    auto manual = gfl::layer_norm(gfl::add(gfl::matmul(attn, params.get("attn.o.W")), x),
                                  params.get("attn.norm.gamma"), params.get("attn.norm.beta"), 1e-5);
    EXPECT_LT(gfl::max_abs_diff(out->value, manual->value), 1e-15);
}

TEST(Mha, ZeroWeightsGiveLayerNormOfQuery) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    gfl::ParamStore<D> params;
    for (const char* p : {"q", "k", "v", "o"}) params.add(std::string("attn.") + p + ".W", Tensor<D>({8, 8}));
    params.add("attn.norm.gamma", Tensor<D>::full({8}, 1.0));
    params.add("attn.norm.beta", Tensor<D>({8}));
    gfl::Rng rng(5);
    auto x = gfl::constant(random_tensor({4, 8}, rng));
    auto out = gfl::mha_forward(x, x, params, cfg, AttentionMask::none());
    auto ln = gfl::layer_norm(x, params.get("attn.norm.gamma"), params.get("attn.norm.beta"), 1e-5);
    EXPECT_LT(gfl::max_abs_diff(out->value, ln->value), 1e-15);
}

TEST(Mha, MatchesPerHeadOracle) {
    ModelConfig cfg{8, 4, 16, 1, 0};
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        gfl::Rng rng(seed);
        auto params = mha_params(cfg, rng);
        auto xq = gfl::constant(random_tensor({5, 8}, rng));
        auto xkv = gfl::constant(random_tensor({7, 8}, rng));
        auto out = gfl::mha_forward(xq, xkv, params, cfg, AttentionMask::none());
        Tensor<D> expect = mha_oracle(xq->value, xkv->value, params.get("attn.q.W")->value,
                                      params.get("attn.k.W")->value, params.get("attn.v.W")->value,
                                      params.get("attn.o.W")->value, cfg.n_heads);
        EXPECT_LT(gfl::max_abs_diff(out->value, expect), 1e-12) << "seed " << seed;
    }
}

TEST(Mha, MissingParameterNamed) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    gfl::ParamStore<D> params;
    gfl::Rng rng(6);
    auto x = gfl::constant(random_tensor({3, 8}, rng));
    try {
        gfl::mha_forward(x, x, params, cfg, AttentionMask::none());
        FAIL() << "expected missing-parameter error";
    } catch (const gfl::Error& e) {
        EXPECT_NE(std::string(e.what()).find("attn.q.W"), std::string::npos);
    }
    auto bad = gfl::constant(random_tensor({3, 7}, rng));
    EXPECT_THROW(gfl::mha_forward(bad, bad, params, cfg, AttentionMask::none()), gfl::ShapeError);
}

TEST(Lrmha, FullRankIdentityFactorizationEqualsMha) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    gfl::Rng rng(7);
    auto dense = mha_params(cfg, rng);
    gfl::ParamStore<D> lr_params;
    for (const char* p : {"q", "k", "v", "o"}) {
        lr_params.add(std::string("attn.") + p + ".E", Tensor<D>::identity(8));
        lr_params.add(std::string("attn.") + p + ".D", dense.get(std::string("attn.") + p + ".W")->value);
    }
    lr_params.add("attn.norm.gamma", Tensor<D>::full({8}, 1.0));
    lr_params.add("attn.norm.beta", Tensor<D>({8}));

    auto x = gfl::constant(random_tensor({6, 8}, rng));
    auto lr_out = gfl::lrmha_forward(x, x, lr_params, cfg, gfl::LowRankConfig{8}, AttentionMask::none());
    auto dense_out = gfl::mha_forward(x, x, dense, cfg, AttentionMask::none());
    EXPECT_LT(gfl::max_abs_diff(lr_out->value, dense_out->value), 1e-12);
}

TEST(Lrmha, ProjectionParameterCountFollowsFactoredForm) {
    // 4 projection types, each r*(d_model + d_model): at d=768, r=64 -> 393,216.
    auto spec = VariantSpec::make_lrt({768, 12, 3072, 1, 0}, 64);
    EXPECT_EQ(gfl::attention_block_weights(spec), 393216u);

    auto stack = gfl::build_stack<D>(spec, 1);
    std::uint64_t attn_weights = 0;
    for (const auto& [name, var] : stack.params) {
        if (name.find(".attn.") != std::string::npos && name.find(".norm.") == std::string::npos) {
            attn_weights += var->value.numel();
        }
    }
    EXPECT_EQ(attn_weights, 393216u);
}

TEST(Lrmha, MatchesMaterializedWeightOracle) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    const std::size_t r = 3;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        gfl::Rng rng(seed);
        gfl::ParamStore<D> lr_params;
        gfl::ParamStore<D> dense;
        for (const char* p : {"q", "k", "v", "o"}) {
            Tensor<D> e = random_tensor({8, r}, rng);
            Tensor<D> d = random_tensor({r, 8}, rng);
            lr_params.add(std::string("attn.") + p + ".E", e);
            lr_params.add(std::string("attn.") + p + ".D", d);
            dense.add(std::string("attn.") + p + ".W", gfl::kernels::matmul(e, d));
        }
        for (auto* ps : {&lr_params, &dense}) {
            ps->add("attn.norm.gamma", Tensor<D>::full({8}, 1.0));
            ps->add("attn.norm.beta", Tensor<D>({8}));
        }
        auto xq = gfl::constant(random_tensor({5, 8}, rng));
        auto xkv = gfl::constant(random_tensor({4, 8}, rng));
        auto lr_out = gfl::lrmha_forward(xq, xkv, lr_params, cfg, gfl::LowRankConfig{r}, AttentionMask::none());
        auto dense_out = gfl::mha_forward(xq, xkv, dense, cfg, AttentionMask::none());
        EXPECT_LT(gfl::max_abs_diff(lr_out->value, dense_out->value), 1e-12) << "seed " << seed;
    }
}

TEST(Linformer, IdentityProjectionEqualsMhaSelfAttention) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    const std::size_t n = 6;
    gfl::Rng rng(8);
    auto params = mha_params(cfg, rng);
    gfl::ParamStore<D> lin_params;
    for (const char* p : {"q", "k", "v", "o"}) {
        lin_params.add(std::string("attn.") + p + ".W", params.get(std::string("attn.") + p + ".W")->value);
    }
    lin_params.add("attn.khat.W", Tensor<D>::identity(n));
    lin_params.add("attn.vhat.W", Tensor<D>::identity(n));
    lin_params.add("attn.norm.gamma", Tensor<D>::full({8}, 1.0));
    lin_params.add("attn.norm.beta", Tensor<D>({8}));

    auto x = gfl::constant(random_tensor({n, 8}, rng));
    auto lin_out = gfl::linformer_attention(x, lin_params, cfg, gfl::LinformerConfig{n, n});
    auto dense_out = gfl::mha_forward(x, x, params, cfg, AttentionMask::none());
    EXPECT_LT(gfl::max_abs_diff(lin_out->value, dense_out->value), 1e-12);
}

TEST(Linformer, MacCountReflectsNxKScores) {
    // Attention MACs: 4*n*d^2 projections + 2*n*k*d shortening + 2*n*k*d scores
    // and weighted sum. The n*k score shape is what makes the last two terms
    // k-linear instead of n-quadratic.
    const std::size_t n = 8, k = 3, d = 8;
    ModelConfig cfg{d, 2, 16, 1, 0};
    auto spec = VariantSpec::make_linformer(cfg, k, n);
    auto stack = gfl::build_stack<D>(spec, 3);
    gfl::Rng rng(9);
    auto x = gfl::constant(random_tensor({n, d}, rng));

    gfl::MacCounter counter;
    gfl::MacScope scope(counter);
    gfl::linformer_attention(x, stack.params, cfg, *spec.linformer, "enc.0.attn");
    EXPECT_EQ(counter.macs, 4 * n * d * d + 4 * n * k * d);
}

TEST(Linformer, TruncatesProjectionColumnsForShortSequences) {
    const std::size_t n_max = 8, k = 3, d = 8, n = 5;
    ModelConfig cfg{d, 2, 16, 1, 0};
    auto spec = VariantSpec::make_linformer(cfg, k, n_max);
    auto stack = gfl::build_stack<D>(spec, 4);
    gfl::Rng rng(10);
    auto x = gfl::constant(random_tensor({n, d}, rng));
    auto out = gfl::linformer_attention(x, stack.params, cfg, *spec.linformer, "enc.0.attn");
    EXPECT_EQ(out->value.shape, (gfl::Shape{n, d}));

    auto too_long = gfl::constant(random_tensor({n_max + 1, d}, rng));
    try {
        gfl::linformer_attention(too_long, stack.params, cfg, *spec.linformer, "enc.0.attn");
        FAIL() << "expected SeqLenError";
    } catch (const gfl::SeqLenError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("9"), std::string::npos);
        EXPECT_NE(msg.find("8"), std::string::npos);
    }
}

TEST(Invariants, CausalIndependenceUnderPerturbation) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    gfl::Rng rng(11);
    auto params = mha_params(cfg, rng);
    Tensor<D> base = random_tensor({6, 8}, rng);
    Tensor<D> perturbed = base;
    for (std::size_t i = 4 * 8; i < perturbed.data.size(); ++i) perturbed.data[i] += rng.uniform(0.5, 2.0);

    auto out1 = gfl::mha_forward(gfl::constant(base), gfl::constant(base), params, cfg, AttentionMask::causal());
    auto out2 = gfl::mha_forward(gfl::constant(perturbed), gfl::constant(perturbed), params, cfg,
                                 AttentionMask::causal());
    for (std::size_t i = 0; i < 4 * 8; ++i) {
        EXPECT_LT(std::abs(out1->value.data[i] - out2->value.data[i]), 1e-12);
    }
}

TEST(Invariants, PermutationEquivarianceWithoutMaskOrPositions) {
    ModelConfig cfg{8, 4, 16, 1, 0};
    gfl::Rng rng(12);
    auto params = mha_params(cfg, rng);
    const std::size_t n = 7;
    Tensor<D> x = random_tensor({n, 8}, rng);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);

    Tensor<D> xp({n, 8});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x.data.begin() + perm[i] * 8, x.data.begin() + (perm[i] + 1) * 8, xp.data.begin() + i * 8);
    }
    auto out = gfl::mha_forward(gfl::constant(x), gfl::constant(x), params, cfg, AttentionMask::none());
    auto outp = gfl::mha_forward(gfl::constant(xp), gfl::constant(xp), params, cfg, AttentionMask::none());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(outp->value.data[i * 8 + j], out->value.data[perm[i] * 8 + j], 1e-10);
        }
    }
}

TEST(Invariants, AttentionGradientsAgainstFiniteDifferences) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    gfl::Rng rng(13);

    {  // standard
        auto spec = VariantSpec::make_transformer(cfg);
        auto stack = gfl::build_stack<D>(spec, 21);
        auto x = gfl::constant(random_tensor({4, 8}, rng));
        auto wgt = gfl::constant(random_tensor({4, 8}, rng));
        auto rep = gfl::check_param_gradients(stack.params, [&] {
            return gfl::sum_all(gfl::mul(
                gfl::mha_forward(x, x, stack.params, cfg, AttentionMask::causal(), "enc.0.attn"), wgt));
        });
        EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
    }
    {  // low-rank
        auto spec = VariantSpec::make_lrt(cfg, 3);
        auto stack = gfl::build_stack<D>(spec, 22);
        auto x = gfl::constant(random_tensor({4, 8}, rng));
        auto wgt = gfl::constant(random_tensor({4, 8}, rng));
        auto rep = gfl::check_param_gradients(stack.params, [&] {
            return gfl::sum_all(gfl::mul(
                gfl::lrmha_forward(x, x, stack.params, cfg, *spec.lowrank, AttentionMask::none(), "enc.0.attn"),
                wgt));
        });
        EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
    }
    {  // linformer
        auto spec = VariantSpec::make_linformer(cfg, 3, 6);
        auto stack = gfl::build_stack<D>(spec, 23);
        auto x = gfl::constant(random_tensor({5, 8}, rng));
        auto wgt = gfl::constant(random_tensor({5, 8}, rng));
        auto rep = gfl::check_param_gradients(stack.params, [&] {
            return gfl::sum_all(gfl::mul(
                gfl::linformer_attention(x, stack.params, cfg, *spec.linformer, "enc.0.attn"), wgt));
        });
        EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
    }
}

TEST(VariantSpec, ExactlyTheDemandedFields) {
    ModelConfig cfg{8, 2, 16, 1, 0};
    VariantSpec t = VariantSpec::make_transformer(cfg);
    EXPECT_NO_THROW(t.validate());
    t.lowrank = gfl::LowRankConfig{4};
    EXPECT_THROW(t.validate(), gfl::ConfigError);

    VariantSpec l = VariantSpec::make_lrt(cfg, 4);
    EXPECT_NO_THROW(l.validate());
    l.linformer = gfl::LinformerConfig{2, 8};
    EXPECT_THROW(l.validate(), gfl::ConfigError);

    VariantSpec lin = VariantSpec::make_linformer(cfg, 4, 8);
    EXPECT_NO_THROW(lin.validate());
    lin.lowrank = gfl::LowRankConfig{2};
    EXPECT_THROW(lin.validate(), gfl::ConfigError);

    EXPECT_THROW(VariantSpec::make_linformer(cfg, 9, 8).validate(), gfl::ConfigError);
    EXPECT_THROW((ModelConfig{9, 2, 16, 1, 0}).validate(), gfl::ConfigError);
}
