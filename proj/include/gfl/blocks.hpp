#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfl/attention.hpp"
#include "gfl/config.hpp"
#include "gfl/ops.hpp"
#include "gfl/param_store.hpp"

namespace gfl {

// ---------------------------------------------------------------------------
// Linear encoder-decoder unit: a dense map m -> n_out factored through rank r.
// Costs r*(m + n_out) parameters and MACs per row instead of m*n_out.
// ---------------------------------------------------------------------------

template <typename Real>
struct LedLayer {
    Var<Real> enc;  // m x r
    Var<Real> dec;  // r x n_out
    std::optional<Var<Real>> bias;

    std::uint64_t param_count() const {
        return enc->value.numel() + dec->value.numel() + (bias ? (*bias)->value.numel() : 0);
    }
};

// (x * E) * D (+ bias). The dense product E*D is never materialized.
template <typename Real>
Var<Real> led_forward(const Var<Real>& x, const LedLayer<Real>& led) {
    auto y = matmul(matmul(x, led.enc), led.dec);
    if (led.bias) y = add(y, *led.bias);
    return y;
}

// ---------------------------------------------------------------------------
// Feed-forward blocks (post-norm residual, no biases, matching the attention
// blocks' wrapper).
// ---------------------------------------------------------------------------

template <typename Real>
Var<Real> ff_forward(const Var<Real>& x, const ParamStore<Real>& params, const ModelConfig& cfg,
                     const std::string& prefix = "ff") {
    detail::check_last_dim(x, cfg.d_model, "ff input");
    auto hidden = relu(matmul(x, params.get(prefix + ".w1.W")));
    auto out = matmul(hidden, params.get(prefix + ".w2.W"));
    return layer_norm(add(out, x), params.get(prefix + ".norm.gamma"), params.get(prefix + ".norm.beta"),
                      Real(1e-5));
}

// relu(x E1 D1) E2 D2 + x, normalized.
template <typename Real>
Var<Real> lrff_forward(const Var<Real>& x, const ParamStore<Real>& params, const ModelConfig& cfg,
                       const LowRankConfig& lr, const std::string& prefix = "ff") {
    lr.validate();
    detail::check_last_dim(x, cfg.d_model, "lrff input");
    auto hidden = relu(matmul(matmul(x, params.get(prefix + ".e1.W")), params.get(prefix + ".d1.W")));
    auto out = matmul(matmul(hidden, params.get(prefix + ".e2.W")), params.get(prefix + ".d2.W"));
    return layer_norm(add(out, x), params.get(prefix + ".norm.gamma"), params.get(prefix + ".norm.beta"),
                      Real(1e-5));
}

// ---------------------------------------------------------------------------
// Encoder / decoder layers and stacks
// ---------------------------------------------------------------------------

namespace detail {

inline std::string layer_prefix(const std::string& stack, std::size_t layer, const char* block) {
    return stack + "." + std::to_string(layer) + "." + block;
}

}  // namespace detail

template <typename Real>
Var<Real> encoder_layer_forward(const Var<Real>& x, const ParamStore<Real>& params, const VariantSpec& spec,
                                std::size_t layer, const std::string& stack = "enc") {
    const std::string attn = detail::layer_prefix(stack, layer, "attn");
    const std::string ff = detail::layer_prefix(stack, layer, "ff");
    Var<Real> a;
    switch (spec.variant) {
        case Variant::transformer:
            a = mha_forward(x, x, params, spec.model, AttentionMask::none(), attn);
            break;
        case Variant::lrt:
            a = lrmha_forward(x, x, params, spec.model, *spec.lowrank, AttentionMask::none(), attn);
            break;
        case Variant::linformer:
            a = linformer_attention(x, params, spec.model, *spec.linformer, attn);
            break;
    }
    if (spec.variant == Variant::lrt) return lrff_forward(a, params, spec.model, *spec.lowrank, ff);
    return ff_forward(a, params, spec.model, ff);
}

// Causal self-attention, cross-attention against the encoder output, then the
// feed-forward block. Only transformer and lrt decoders exist; the linformer
// length projection cannot respect causality.
template <typename Real>
Var<Real> decoder_layer_forward(const Var<Real>& y, const Var<Real>& enc_out, const ParamStore<Real>& params,
                                const VariantSpec& spec, std::size_t layer, const std::string& stack = "dec") {
    if (spec.variant == Variant::linformer) {
        throw UnsupportedVariantError("linformer decoder is unsupported (length projection mixes future steps)");
    }
    const std::string self_p = detail::layer_prefix(stack, layer, "attn");
    const std::string cross_p = detail::layer_prefix(stack, layer, "cross");
    const std::string ff_p = detail::layer_prefix(stack, layer, "ff");
    Var<Real> h;
    if (spec.variant == Variant::lrt) {
        h = lrmha_forward(y, y, params, spec.model, *spec.lowrank, AttentionMask::causal(), self_p);
        h = lrmha_forward(h, enc_out, params, spec.model, *spec.lowrank, AttentionMask::none(), cross_p);
        return lrff_forward(h, params, spec.model, *spec.lowrank, ff_p);
    }
    h = mha_forward(y, y, params, spec.model, AttentionMask::causal(), self_p);
    h = mha_forward(h, enc_out, params, spec.model, AttentionMask::none(), cross_p);
    return ff_forward(h, params, spec.model, ff_p);
}

template <typename Real>
Var<Real> encoder_stack_forward(Var<Real> x, const ParamStore<Real>& params, const VariantSpec& spec) {
    for (std::size_t i = 0; i < spec.model.n_enc_layers; ++i) x = encoder_layer_forward(x, params, spec, i);
    return x;
}

// M = 0 leaves y untouched.
template <typename Real>
Var<Real> decoder_stack_forward(Var<Real> y, const Var<Real>& enc_out, const ParamStore<Real>& params,
                                const VariantSpec& spec) {
    for (std::size_t i = 0; i < spec.model.n_dec_layers; ++i) {
        y = decoder_layer_forward(y, enc_out, params, spec, i);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
void add_norm(ParamStore<Real>& ps, const std::string& prefix, std::size_t d) {
    ps.add(prefix + ".norm.gamma", Tensor<Real>::full({d}, Real(1)));
    ps.add(prefix + ".norm.beta", Tensor<Real>({d}));
}

template <typename Real>
void add_attention_params(ParamStore<Real>& ps, const std::string& prefix, const VariantSpec& spec, Rng& rng) {
    const std::size_t d = spec.model.d_model;
    static constexpr const char* kProj[] = {"q", "k", "v", "o"};
    if (spec.variant == Variant::lrt) {
        const std::size_t r = spec.lowrank->r;
        for (const char* p : kProj) {
            ps.add(prefix + "." + p + ".E", init_uniform_fan<Real>({d, r}, d, r, rng));
            ps.add(prefix + "." + p + ".D", init_uniform_fan<Real>({r, d}, r, d, rng));
        }
    } else {
        for (const char* p : kProj) {
            ps.add(prefix + "." + p + ".W", init_uniform_fan<Real>({d, d}, d, d, rng));
        }
        if (spec.variant == Variant::linformer) {
            const auto& lin = *spec.linformer;
            ps.add(prefix + ".khat.W", init_uniform_fan<Real>({lin.k, lin.n_max}, lin.n_max, lin.k, rng));
            ps.add(prefix + ".vhat.W", init_uniform_fan<Real>({lin.k, lin.n_max}, lin.n_max, lin.k, rng));
        }
    }
    add_norm(ps, prefix, d);
}

template <typename Real>
void add_ff_params(ParamStore<Real>& ps, const std::string& prefix, const VariantSpec& spec, Rng& rng) {
    const std::size_t d = spec.model.d_model, dff = spec.model.d_ff;
    if (spec.variant == Variant::lrt) {
        const std::size_t r = spec.lowrank->r;
        ps.add(prefix + ".e1.W", init_uniform_fan<Real>({d, r}, d, r, rng));
        ps.add(prefix + ".d1.W", init_uniform_fan<Real>({r, dff}, r, dff, rng));
        ps.add(prefix + ".e2.W", init_uniform_fan<Real>({dff, r}, dff, r, rng));
        ps.add(prefix + ".d2.W", init_uniform_fan<Real>({r, d}, r, d, rng));
    } else {
        ps.add(prefix + ".w1.W", init_uniform_fan<Real>({d, dff}, d, dff, rng));
        ps.add(prefix + ".w2.W", init_uniform_fan<Real>({dff, d}, dff, d, rng));
    }
    add_norm(ps, prefix, d);
}

template <typename Real>
void append_stack_params(ParamStore<Real>& ps, const VariantSpec& spec, Rng& rng) {
    for (std::size_t i = 0; i < spec.model.n_enc_layers; ++i) {
        add_attention_params(ps, layer_prefix("enc", i, "attn"), spec, rng);
        add_ff_params(ps, layer_prefix("enc", i, "ff"), spec, rng);
    }
    for (std::size_t i = 0; i < spec.model.n_dec_layers; ++i) {
        add_attention_params(ps, layer_prefix("dec", i, "attn"), spec, rng);
        add_attention_params(ps, layer_prefix("dec", i, "cross"), spec, rng);
        add_ff_params(ps, layer_prefix("dec", i, "ff"), spec, rng);
    }
}

}  // namespace detail

// Encoder/decoder stack with freshly initialized parameters.
template <typename Real>
struct StackModel {
    VariantSpec spec;
    ParamStore<Real> params;
};

template <typename Real>
StackModel<Real> build_stack(const VariantSpec& spec, std::uint64_t seed) {
    spec.validate();
    StackModel<Real> m{spec, ParamStore<Real>(seed)};
    Rng rng(seed);
    detail::append_stack_params(m.params, spec, rng);
    return m;
}

// The forward pass the benchmark and cost model instrument: the encoder stack
// and, when decoder layers exist, the decoder stack driven by the same
// sequence length.
template <typename Real>
Var<Real> stack_forward(const StackModel<Real>& model, const Var<Real>& x) {
    auto enc_out = encoder_stack_forward(x, model.params, model.spec);
    if (model.spec.model.n_dec_layers == 0) return enc_out;
    return decoder_stack_forward(x, enc_out, model.params, model.spec);
}

// ---------------------------------------------------------------------------
// Sequence classifier: token + position embeddings, a [CLS] prefix read by a
// linear head. A length-n input consumes exactly n+1 positions.
// ---------------------------------------------------------------------------

struct ClassifierConfig {
    std::size_t vocab_size = 256;
    std::size_t n_classes = 10;
    std::size_t n_max = 784;  // maximum token count, excluding [CLS]

    void validate() const {
        if (vocab_size == 0 || n_classes == 0 || n_max == 0) throw ConfigError("classifier dims must be positive");
    }
};

template <typename Real>
struct ClassifierModel {
    VariantSpec spec;
    ClassifierConfig cls;
    ParamStore<Real> params;

    // batch of equal-length token sequences -> logits [batch, n_classes]
    Var<Real> forward(const std::vector<std::vector<std::size_t>>& batch) const {
        if (batch.empty()) throw ShapeError("classifier forward: empty batch");
        const std::size_t b = batch.size(), n = batch[0].size();
        if (n == 0) throw ShapeError("classifier forward: empty sequence");
        if (n > cls.n_max) {
            throw SeqLenError("sequence length " + std::to_string(n) + " exceeds classifier n_max " +
                              std::to_string(cls.n_max));
        }
        std::vector<std::size_t> flat;
        flat.reserve(b * n);
        for (const auto& seq : batch) {
            if (seq.size() != n) throw ShapeError("classifier forward: ragged batch");
            flat.insert(flat.end(), seq.begin(), seq.end());
        }
        const std::size_t d = spec.model.d_model;
        auto tok = reshape(embedding_lookup(params.get("embed.tok.W"), flat), {b, n, d});
        auto cls_tok = reshape(embedding_lookup(params.get("embed.cls.W"), std::vector<std::size_t>(b, 0)),
                               {b, 1, d});
        auto x = concat<Real>({cls_tok, tok}, 1);  // [b, n+1, d]
        auto pos = slice(params.get("embed.pos.W"), 0, 0, n + 1);
        x = add(x, pos);
        x = encoder_stack_forward(x, params, spec);
        auto pooled = reshape(slice(x, 1, 0, 1), {b, d});
        return matmul(pooled, params.get("head.W"));
    }
};

template <typename Real>
ClassifierModel<Real> build_classifier(const VariantSpec& spec, const ClassifierConfig& cls, std::uint64_t seed) {
    spec.validate();
    cls.validate();
    ClassifierModel<Real> m{spec, cls, ParamStore<Real>(seed)};
    Rng rng(seed);
    const std::size_t d = spec.model.d_model;
    m.params.add("embed.tok.W", init_uniform_fan<Real>({cls.vocab_size, d}, cls.vocab_size, d, rng));
    m.params.add("embed.pos.W", init_uniform_fan<Real>({cls.n_max + 1, d}, cls.n_max + 1, d, rng));
    m.params.add("embed.cls.W", init_uniform_fan<Real>({1, d}, 1, d, rng));
    detail::append_stack_params(m.params, spec, rng);
    // Zero head: untrained logits are exactly uniform, so the first loss is
    // ln(n_classes); gradients through the head are nonzero from step one.
    m.params.add("head.W", Tensor<Real>({d, cls.n_classes}));
    return m;
}

// ---------------------------------------------------------------------------
// Analytic parameter accounting. Every number here must match an enumerated
// ParamStore exactly; tests and the validate command enforce that.
// ---------------------------------------------------------------------------

struct ParamCount {
    std::uint64_t attn_weights = 0;     // projection weights in attention blocks
    std::uint64_t ff_weights = 0;       // feed-forward weights
    std::uint64_t linformer_proj = 0;   // khat/vhat length projections
    std::uint64_t norms = 0;            // gamma/beta
    std::uint64_t embeddings = 0;
    std::uint64_t head = 0;

    std::uint64_t weights() const { return attn_weights + ff_weights + linformer_proj; }
    std::uint64_t total() const { return weights() + norms + embeddings + head; }
};

// Weight-only cost of one attention block (self or cross).
inline std::uint64_t attention_block_weights(const VariantSpec& spec) {
    const std::uint64_t d = spec.model.d_model;
    if (spec.variant == Variant::lrt) return 8ull * d * spec.lowrank->r;
    return 4ull * d * d;
}

inline std::uint64_t ff_block_weights(const VariantSpec& spec) {
    const std::uint64_t d = spec.model.d_model, dff = spec.model.d_ff;
    if (spec.variant == Variant::lrt) return 2ull * spec.lowrank->r * (d + dff);
    return 2ull * d * dff;
}

// Weight-only cost of one encoder layer; the headline compression ratios are
// ratios of this number across variants.
inline std::uint64_t encoder_layer_weights(const VariantSpec& spec) {
    std::uint64_t w = attention_block_weights(spec) + ff_block_weights(spec);
    if (spec.variant == Variant::linformer) w += 2ull * spec.linformer->k * spec.linformer->n_max;
    return w;
}

inline ParamCount count_stack_params(const VariantSpec& spec) {
    spec.validate();
    const std::uint64_t d = spec.model.d_model;
    const std::uint64_t n_enc = spec.model.n_enc_layers, n_dec = spec.model.n_dec_layers;
    ParamCount c;
    c.attn_weights = attention_block_weights(spec) * (n_enc + 2 * n_dec);
    c.ff_weights = ff_block_weights(spec) * (n_enc + n_dec);
    if (spec.variant == Variant::linformer) c.linformer_proj = 2ull * spec.linformer->k * spec.linformer->n_max * n_enc;
    c.norms = 2ull * d * (2 * n_enc + 3 * n_dec);
    return c;
}

inline ParamCount count_params(const VariantSpec& spec, const ClassifierConfig& cls) {
    ParamCount c = count_stack_params(spec);
    const std::uint64_t d = spec.model.d_model;
    c.embeddings = static_cast<std::uint64_t>(cls.vocab_size) * d + (cls.n_max + 1) * d + d;
    c.head = static_cast<std::uint64_t>(d) * cls.n_classes;
    return c;
}

// ---------------------------------------------------------------------------
// Model persistence: parameter blob plus a JSON sidecar carrying the spec.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json spec_to_json(const VariantSpec& spec) {
    nlohmann::json j;
    j["variant"] = variant_name(spec.variant);
    j["model"] = {{"d_model", spec.model.d_model},
                  {"n_heads", spec.model.n_heads},
                  {"d_ff", spec.model.d_ff},
                  {"n_enc_layers", spec.model.n_enc_layers},
                  {"n_dec_layers", spec.model.n_dec_layers}};
    if (spec.lowrank) j["lowrank"] = {{"r", spec.lowrank->r}};
    if (spec.linformer) j["linformer"] = {{"k", spec.linformer->k}, {"n_max", spec.linformer->n_max}};
    return j;
}

inline VariantSpec spec_from_json(const nlohmann::json& j) {
    VariantSpec spec;
    spec.variant = variant_from_name(j.at("variant").get<std::string>());
    const auto& m = j.at("model");
    spec.model = {m.at("d_model").get<std::size_t>(), m.at("n_heads").get<std::size_t>(),
                  m.at("d_ff").get<std::size_t>(), m.at("n_enc_layers").get<std::size_t>(),
                  m.at("n_dec_layers").get<std::size_t>()};
    if (j.contains("lowrank")) spec.lowrank = LowRankConfig{j["lowrank"].at("r").get<std::size_t>()};
    if (j.contains("linformer")) {
        spec.linformer = LinformerConfig{j["linformer"].at("k").get<std::size_t>(),
                                         j["linformer"].at("n_max").get<std::size_t>()};
    }
    spec.validate();
    return spec;
}

}  // namespace detail

template <typename Real>
void save_model(const ClassifierModel<Real>& model, const std::string& path) {
    model.params.save(path);
    nlohmann::json j = detail::spec_to_json(model.spec);
    j["dtype"] = sizeof(Real) == 4 ? "f32" : "f64";
    j["classifier"] = {{"vocab_size", model.cls.vocab_size},
                       {"n_classes", model.cls.n_classes},
                       {"n_max", model.cls.n_max}};
    std::ofstream f(path + ".json");
    if (!f) throw IoError("cannot write sidecar '" + path + ".json'");
    f << j.dump(2) << "\n";
}

template <typename Real>
ClassifierModel<Real> load_model(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw IoError("missing sidecar '" + path + ".json'");
    nlohmann::json j = nlohmann::json::parse(f, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw IoError("sidecar '" + path + ".json' is not valid JSON");
    const std::string dtype = j.at("dtype").get<std::string>();
    const std::string expect = sizeof(Real) == 4 ? "f32" : "f64";
    if (dtype != expect) {
        throw IoError("model stored as " + dtype + " but loaded as " + expect);
    }
    VariantSpec spec = detail::spec_from_json(j);
    const auto& c = j.at("classifier");
    ClassifierConfig cls{c.at("vocab_size").get<std::size_t>(), c.at("n_classes").get<std::size_t>(),
                         c.at("n_max").get<std::size_t>()};
    ClassifierModel<Real> model = build_classifier<Real>(spec, cls, 0);
    ParamStore<Real> loaded = ParamStore<Real>::load(path);
    if (loaded.size() != model.params.size() || loaded.total_count() != model.params.total_count()) {
        throw IoError("parameter blob does not match the sidecar architecture");
    }
    for (auto& [name, var] : model.params) {
        const auto& src = loaded.get(name);
        if (src->value.shape != var->value.shape) throw IoError("shape mismatch for '" + name + "'");
        var->value = src->value;
    }
    return model;
}

}  // namespace gfl
