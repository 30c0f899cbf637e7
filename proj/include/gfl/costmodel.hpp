#pragma once

#include <cstdint>
#include <sstream>
#include <string>

#include "gfl/blocks.hpp"
#include "gfl/config.hpp"
#include "gfl/mac_counter.hpp"

// Closed-form cost model for parameters, forward MACs and memory, validated
// against instrumented execution. Conventions (all enforced by tests):
//   - 1 MAC = 1 FLOP unit; an m x n map applied to one token costs m*n.
//   - Only matmul MACs count; softmax/layer-norm/relu are excluded.
//   - backward ~= 2x forward, so macs_fwd_bwd = 3 * macs_fwd.
//   - Memory counts tensors, not allocator overhead. The training ledger
//     retains, per block, the inputs of every matmul and layer norm plus each
//     softmax output (its backward needs only the output):
//       attention (standard):  x, Q, K, V, probs [H,n,n], merged, residual sum
//       attention (low-rank):  + one r-wide intermediate per projection
//       attention (linformer): x, Q, K, V, Khat, Vhat, probs [H,n,k], merged,
//                              residual sum
//       cross-attention:       + the key/value source, counted per layer
//       feed-forward:          x, hidden activation, residual sum
//       low-rank feed-forward: + the two r-wide intermediates
//     Inference memory is parameters plus the largest per-block live set:
//       attention: x, Q, K, V, probs, merged (+ low-rank/linformer extras)
//       feed-forward: x, hidden, output (+ low-rank extra)
//   - The batch dimension scales every activation term linearly; parameters
//     do not depend on it.

namespace gfl {

enum class MemMode { infer, train };

struct CostReport {
    Variant variant;
    std::size_t n = 0;
    std::size_t rank = 0;  // r for lrt, k for linformer, 0 for transformer
    std::uint64_t params = 0;
    std::uint64_t macs_fwd = 0;
    std::uint64_t macs_fwd_bwd = 0;
    std::uint64_t mem_infer_bytes = 0;
    std::uint64_t mem_train_bytes = 0;
    std::size_t element_size = 8;
};

namespace costdetail {

struct LayerMacs {
    std::uint64_t encoder = 0;
    std::uint64_t decoder = 0;
};

inline LayerMacs layer_macs(const VariantSpec& spec, std::uint64_t n) {
    const std::uint64_t d = spec.model.d_model, dff = spec.model.d_ff;
    LayerMacs m;
    switch (spec.variant) {
        case Variant::transformer: {
            const std::uint64_t attn = 4 * n * d * d + 2 * n * n * d;
            const std::uint64_t ff = 2 * n * d * dff;
            m.encoder = attn + ff;
            m.decoder = 2 * attn + ff;  // causal self + cross at equal lengths
            break;
        }
        case Variant::lrt: {
            const std::uint64_t r = spec.lowrank->r;
            const std::uint64_t attn = 8 * n * r * d + 2 * n * n * d;
            const std::uint64_t ff = 2 * n * r * (d + dff);
            m.encoder = attn + ff;
            m.decoder = 2 * attn + ff;
            break;
        }
        case Variant::linformer: {
            const std::uint64_t k = spec.linformer->k;
            // q/k/v/o projections + khat/vhat shortening + n x k scores and
            // weighted sum
            m.encoder = 4 * n * d * d + 4 * n * k * d + 2 * n * d * dff;
            m.decoder = 0;  // unsupported
            break;
        }
    }
    return m;
}

struct LayerMem {
    std::uint64_t cached = 0;     // training ledger, elements
    std::uint64_t transient = 0;  // inference peak, elements
};

inline LayerMem encoder_layer_mem(const VariantSpec& spec, std::uint64_t n) {
    const std::uint64_t d = spec.model.d_model, dff = spec.model.d_ff, h = spec.model.n_heads;
    LayerMem m;
    switch (spec.variant) {
        case Variant::transformer:
            m.cached = 8 * n * d + h * n * n + n * dff;
            m.transient = std::max(5 * n * d + h * n * n, 2 * n * d + n * dff);
            break;
        case Variant::lrt: {
            const std::uint64_t r = spec.lowrank->r;
            m.cached = 8 * n * d + h * n * n + n * dff + 6 * n * r;
            m.transient = std::max(5 * n * d + h * n * n + n * r, 2 * n * d + n * dff + n * r);
            break;
        }
        case Variant::linformer: {
            const std::uint64_t k = spec.linformer->k;
            m.cached = 8 * n * d + 2 * k * d + h * n * k + n * dff;
            m.transient = std::max(5 * n * d + 2 * k * d + h * n * k, 2 * n * d + n * dff);
            break;
        }
    }
    return m;
}

inline LayerMem decoder_layer_mem(const VariantSpec& spec, std::uint64_t n) {
    const std::uint64_t d = spec.model.d_model, dff = spec.model.d_ff, h = spec.model.n_heads;
    LayerMem m;
    const std::uint64_t r = spec.variant == Variant::lrt ? spec.lowrank->r : 0;
    m.cached = 15 * n * d + 2 * h * n * n + n * dff + 10 * n * r;
    m.transient = std::max(6 * n * d + h * n * n + n * r, 2 * n * d + n * dff + n * r);
    return m;
}

}  // namespace costdetail

// Exact matmul MAC count of one stack forward pass.
inline std::uint64_t macs_forward(const VariantSpec& spec, std::size_t n, std::size_t batch = 1) {
    spec.validate();
    if (n == 0) throw ConfigError("macs_forward: n must be >= 1");
    if (spec.variant == Variant::linformer && n > spec.linformer->n_max) {
        throw SeqLenError("macs_forward: n " + std::to_string(n) + " exceeds linformer n_max " +
                          std::to_string(spec.linformer->n_max));
    }
    const auto m = costdetail::layer_macs(spec, n);
    return batch * (m.encoder * spec.model.n_enc_layers + m.decoder * spec.model.n_dec_layers);
}

inline std::uint64_t macs_forward_backward(const VariantSpec& spec, std::size_t n, std::size_t batch = 1) {
    return 3 * macs_forward(spec, n, batch);
}

// The per-layer attention matrix held for the backward pass: H*n^2 elements
// for quadratic attention, H*n*k for the shortened variant.
inline std::uint64_t attention_matrix_cache_bytes(const VariantSpec& spec, std::size_t n,
                                                  std::size_t element_size) {
    const std::uint64_t h = spec.model.n_heads;
    if (spec.variant == Variant::linformer) return h * n * spec.linformer->k * element_size;
    return h * static_cast<std::uint64_t>(n) * n * element_size;
}

inline std::uint64_t memory_estimate(const VariantSpec& spec, std::size_t n, MemMode mode,
                                     std::size_t element_size, std::size_t batch = 1) {
    spec.validate();
    if (spec.variant == Variant::linformer && n > spec.linformer->n_max) {
        throw SeqLenError("memory_estimate: n " + std::to_string(n) + " exceeds linformer n_max " +
                          std::to_string(spec.linformer->n_max));
    }
    const std::uint64_t param_elems = count_stack_params(spec).total();
    const auto enc = costdetail::encoder_layer_mem(spec, n);
    const auto dec = costdetail::decoder_layer_mem(spec, n);
    if (mode == MemMode::train) {
        const std::uint64_t cached =
            enc.cached * spec.model.n_enc_layers + dec.cached * spec.model.n_dec_layers;
        return (2 * param_elems + batch * cached) * element_size;
    }
    std::uint64_t peak = spec.model.n_enc_layers > 0 ? enc.transient : 0;
    if (spec.model.n_dec_layers > 0) peak = std::max(peak, dec.transient);
    return (param_elems + batch * peak) * element_size;
}

inline CostReport cost_report(const VariantSpec& spec, std::size_t n, std::size_t element_size,
                              std::size_t batch = 1) {
    CostReport r;
    r.variant = spec.variant;
    r.n = n;
    r.rank = spec.rank();
    r.params = count_stack_params(spec).total();
    r.macs_fwd = macs_forward(spec, n, batch);
    r.macs_fwd_bwd = 3 * r.macs_fwd;
    r.mem_infer_bytes = memory_estimate(spec, n, MemMode::infer, element_size, batch);
    r.mem_train_bytes = memory_estimate(spec, n, MemMode::train, element_size, batch);
    r.element_size = element_size;
    return r;
}

struct InstrumentationReport {
    std::uint64_t analytic = 0;
    std::uint64_t measured = 0;
};

// Runs a real forward with the MAC counter and demands exact agreement with
// the analytic count, layer by layer. `analytic_bias` deliberately skews the
// analytic side; it exists so fault injection can prove the check detects
// drift.
template <typename Real = double>
InstrumentationReport validate_against_instrumentation(const VariantSpec& spec, std::size_t n,
                                                       std::uint64_t seed = 1,
                                                       std::int64_t analytic_bias = 0) {
    spec.validate();
    auto stack = build_stack<Real>(spec, seed);
    Rng rng(seed + 1);
    Tensor<Real> xv({n, spec.model.d_model});
    for (Real& v : xv.data) v = static_cast<Real>(rng.uniform(-1.0, 1.0));
    auto x = constant(std::move(xv));

    const auto per_layer = costdetail::layer_macs(spec, n);
    MacCounter counter;
    std::ostringstream diff;
    bool ok = true;
    std::uint64_t measured_total = 0;
    const std::uint64_t analytic_total =
        static_cast<std::uint64_t>(static_cast<std::int64_t>(macs_forward(spec, n)) + analytic_bias);

    {
        MacScope scope(counter);
        Var<Real> h = x;
        for (std::size_t i = 0; i < spec.model.n_enc_layers; ++i) {
            const std::uint64_t before = counter.macs;
            h = encoder_layer_forward(h, stack.params, spec, i);
            const std::uint64_t got = counter.macs - before;
            if (got != per_layer.encoder) {
                ok = false;
                diff << "enc." << i << ": analytic " << per_layer.encoder << ", measured " << got << "; ";
            }
        }
        Var<Real> y = x;
        for (std::size_t i = 0; i < spec.model.n_dec_layers; ++i) {
            const std::uint64_t before = counter.macs;
            y = decoder_layer_forward(y, h, stack.params, spec, i);
            const std::uint64_t got = counter.macs - before;
            if (got != per_layer.decoder) {
                ok = false;
                diff << "dec." << i << ": analytic " << per_layer.decoder << ", measured " << got << "; ";
            }
        }
        measured_total = counter.macs;
    }

    if (analytic_total != measured_total) ok = false;
    if (!ok) {
        std::ostringstream msg;
        msg << "cost model mismatch for " << variant_name(spec.variant) << " at n=" << n << ": analytic "
            << analytic_total << ", measured " << measured_total;
        if (diff.tellp() > 0) msg << " (" << diff.str() << ")";
        throw ValidationError(msg.str());
    }
    return {analytic_total, measured_total};
}

}  // namespace gfl
