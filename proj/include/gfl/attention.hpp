#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gfl/config.hpp"
#include "gfl/ops.hpp"
#include "gfl/param_store.hpp"

// Attention blocks. All three variants share one dataflow: project the
// inputs, run scaled dot-product attention per head, concatenate, apply the
// output projection, then residual-add the query input and layer-normalize.
// They differ only in how the projections are computed:
//   - standard:  dense W per projection
//   - low-rank:  W replaced by E*D, applied as two sequential matmuls
//   - linformer: dense W, plus learned k x n maps shortening keys and values
//
// Parameter naming: "{prefix}.{q|k|v|o}.{W|E|D}", "{prefix}.{khat|vhat}.W",
// "{prefix}.norm.{gamma|beta}", with prefix like "enc.0.attn".

namespace gfl {

namespace detail {

template <typename Real>
void check_last_dim(const Var<Real>& x, std::size_t d, const char* what) {
    if (x->value.rank() < 2 || x->value.shape.back() != d) {
        throw ShapeError(std::string(what) + " must have last dim " + std::to_string(d) + ", got " +
                         shape_str(x->value.shape));
    }
}

template <typename Real>
Var<Real> masked_scores(Var<Real> scores, const AttentionMask& mask) {
    switch (mask.kind) {
        case AttentionMask::Kind::none: return scores;
        case AttentionMask::Kind::causal: return apply_causal_mask(scores);
        case AttentionMask::Kind::padding: return apply_key_padding_mask(scores, mask.valid_len);
    }
    return scores;
}

}  // namespace detail

// softmax(Q K^T / sqrt(d_k)) V over the last two dims; leading batch dims
// pass through. Masked logits are set to the -1e9 sentinel before softmax.
template <typename Real>
Var<Real> sdpa(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, const AttentionMask& mask) {
    const std::size_t d_k = q->value.shape.back();
    if (k->value.shape.back() != d_k) {
        throw ShapeError("sdpa: query/key depth mismatch: " + shape_str(q->value.shape) + " vs " +
                         shape_str(k->value.shape));
    }
    const std::size_t n_k = k->value.shape[k->value.rank() - 2];
    if (v->value.shape[v->value.rank() - 2] != n_k) {
        throw ShapeError("sdpa: value length does not match key length: " + shape_str(v->value.shape) + " vs " +
                         shape_str(k->value.shape));
    }
    auto scores = scale(matmul(q, transpose_last2(k)), Real(1) / static_cast<Real>(std::sqrt(double(d_k))));
    auto probs = softmax_lastdim(detail::masked_scores(scores, mask));
    return matmul(probs, v);
}

namespace detail {

// Per-head attention over full-width q/k/v projections, concat, output
// projection, residual from the raw query input, then layer norm.
template <typename Real>
Var<Real> attention_core(const Var<Real>& x_q, const Var<Real>& q_full, const Var<Real>& k_full,
                         const Var<Real>& v_full, const std::function<Var<Real>(const Var<Real>&)>& project_out,
                         const ParamStore<Real>& params, const ModelConfig& cfg, const AttentionMask& mask,
                         const std::string& prefix) {
    const std::size_t dh = cfg.d_head();
    const std::size_t last = q_full->value.rank() - 1;
    std::vector<Var<Real>> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        auto qh = slice(q_full, last, h * dh, dh);
        auto kh = slice(k_full, last, h * dh, dh);
        auto vh = slice(v_full, last, h * dh, dh);
        heads.push_back(sdpa(qh, kh, vh, mask));
    }
    auto merged = concat(heads, last);
    auto projected = project_out(merged);
    auto gamma = params.get(prefix + ".norm.gamma");
    auto beta = params.get(prefix + ".norm.beta");
    return layer_norm(add(projected, x_q), gamma, beta, Real(1e-5));
}

}  // namespace detail

// Standard multi-head attention with residual + layer norm. W^Q/W^K/W^V/W^O
// are d_model x d_model; heads are column blocks of the projected tensors.
template <typename Real>
Var<Real> mha_forward(const Var<Real>& x_q, const Var<Real>& x_kv, const ParamStore<Real>& params,
                      const ModelConfig& cfg, const AttentionMask& mask, const std::string& prefix = "attn") {
    cfg.validate();
    detail::check_last_dim(x_q, cfg.d_model, "mha query input");
    detail::check_last_dim(x_kv, cfg.d_model, "mha key/value input");
    auto q = matmul(x_q, params.get(prefix + ".q.W"));
    auto k = matmul(x_kv, params.get(prefix + ".k.W"));
    auto v = matmul(x_kv, params.get(prefix + ".v.W"));
    auto project_out = [&](const Var<Real>& merged) { return matmul(merged, params.get(prefix + ".o.W")); };
    return detail::attention_core<Real>(x_q, q, k, v, project_out, params, cfg, mask, prefix);
}

// Multi-head attention with every projection W replaced by the factor pair
// E (d_model x r) and D (r x d_model), applied as two sequential matmuls;
// the product E*D is never materialized. Column blocks of D act as the
// per-head decoders.
template <typename Real>
Var<Real> lrmha_forward(const Var<Real>& x_q, const Var<Real>& x_kv, const ParamStore<Real>& params,
                        const ModelConfig& cfg, const LowRankConfig& lr, const AttentionMask& mask,
                        const std::string& prefix = "attn") {
    cfg.validate();
    lr.validate();
    detail::check_last_dim(x_q, cfg.d_model, "lrmha query input");
    detail::check_last_dim(x_kv, cfg.d_model, "lrmha key/value input");
    auto led = [&](const Var<Real>& x, const char* which) {
        return matmul(matmul(x, params.get(prefix + "." + which + ".E")), params.get(prefix + "." + which + ".D"));
    };
    auto q = led(x_q, "q");
    auto k = led(x_kv, "k");
    auto v = led(x_kv, "v");
    auto project_out = [&](const Var<Real>& merged) { return led(merged, "o"); };
    return detail::attention_core<Real>(x_q, q, k, v, project_out, params, cfg, mask, prefix);
}

// Self-attention with keys and values shortened from length n to k by learned
// projections W^khat, W^vhat (k x n_max). For n < n_max only the first n
// columns are used. The score matrix is n x k, never n x n. Causal operation
// is rejected: the length projection mixes future positions.
template <typename Real>
Var<Real> linformer_attention(const Var<Real>& x, const ParamStore<Real>& params, const ModelConfig& cfg,
                              const LinformerConfig& lin, const std::string& prefix = "attn") {
    cfg.validate();
    lin.validate();
    detail::check_last_dim(x, cfg.d_model, "linformer input");
    const std::size_t n = x->value.shape[x->value.rank() - 2];
    if (n > lin.n_max) {
        throw SeqLenError("linformer: sequence length " + std::to_string(n) + " exceeds n_max " +
                          std::to_string(lin.n_max));
    }
    auto q = matmul(x, params.get(prefix + ".q.W"));
    auto k = matmul(x, params.get(prefix + ".k.W"));
    auto v = matmul(x, params.get(prefix + ".v.W"));
    auto shorten = [&](const Var<Real>& seq, const char* which) {
        auto proj = params.get(prefix + "." + which + ".W");
        auto used = n == lin.n_max ? proj : slice(proj, 1, 0, n);
        return matmul(used, seq);  // [k, n] x [*, n, d] -> [*, k, d]
    };
    auto k_hat = shorten(k, "khat");
    auto v_hat = shorten(v, "vhat");
    auto project_out = [&](const Var<Real>& merged) { return matmul(merged, params.get(prefix + ".o.W")); };
    return detail::attention_core<Real>(x, q, k_hat, v_hat, project_out, params, cfg, AttentionMask::none(),
                                        prefix);
}

}  // namespace gfl
