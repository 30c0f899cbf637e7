#pragma once

#include <cstdint>
#include <vector>

#include "gfl/kernels.hpp"
#include "gfl/mac_counter.hpp"
#include "gfl/rng.hpp"
#include "gfl/tape.hpp"

// Differentiable primitives. Each op computes its value through kernels.hpp,
// reports matmul MACs to the active counter, and records a backward step on
// the active tape. With no tape installed the forward path is unchanged, so
// results are bit-identical either way.

namespace gfl {

namespace detail {

template <typename Real>
Var<Real> make_result(Tensor<Real> value, bool requires_grad) {
    auto out = std::make_shared<Node<Real>>();
    out->value = std::move(value);
    out->requires_grad = requires_grad;
    Tape<Real>* t = active_tape<Real>();
    if (t) out->producer = t;
    return out;
}

template <typename Real, typename Fn>
void record_step(const Var<Real>& out, Fn&& fn) {
    Tape<Real>* t = active_tape<Real>();
    if (t && out->requires_grad) t->record(std::forward<Fn>(fn));
}

// Sum dy over the leading broadcast dims, accumulating into db (same shape as b).
template <typename Real>
void reduce_broadcast_into(Tensor<Real>& db, const Tensor<Real>& dy) {
    const std::size_t bn = db.numel();
    const std::size_t rep = dy.numel() / bn;
    for (std::size_t r = 0; r < rep; ++r) {
        const Real* src = dy.data.data() + r * bn;
        for (std::size_t i = 0; i < bn; ++i) db.data[i] += src[i];
    }
}

}  // namespace detail

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
    const kernels::MatmulDims d = kernels::matmul_dims(a->value, b->value);
    record_macs(static_cast<std::uint64_t>(d.batch) * d.m * d.p * d.n);
    auto out = detail::make_result(kernels::matmul(a->value, b->value), a->requires_grad || b->requires_grad);
    detail::record_step(out, [a, b, out, d]() {
        const Tensor<Real>& dy = out->grad;
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < d.batch; ++i) {
                Real* da = a->grad.data.data() + (d.a_batched ? i * d.m * d.p : 0);
                const Real* pdy = dy.data.data() + i * d.m * d.n;
                const Real* pb = b->value.data.data() + (d.b_batched ? i * d.p * d.n : 0);
                kernels::mm2d_nt(da, pdy, pb, d.m, d.n, d.p);
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < d.batch; ++i) {
                Real* db = b->grad.data.data() + (d.b_batched ? i * d.p * d.n : 0);
                const Real* pa = a->value.data.data() + (d.a_batched ? i * d.m * d.p : 0);
                const Real* pdy = dy.data.data() + i * d.m * d.n;
                kernels::mm2d_tn(db, pa, pdy, d.p, d.m, d.n);
            }
        }
    });
    return out;
}

template <typename Real>
Var<Real> transpose_last2(const Var<Real>& x) {
    auto out = detail::make_result(kernels::transpose_last2(x->value), x->requires_grad);
    detail::record_step(out, [x, out]() {
        x->accumulate(kernels::transpose_last2(out->grad));
    });
    return out;
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape s) {
    if (shape_numel(s) != x->value.numel()) {
        throw ShapeError("reshape " + shape_str(x->value.shape) + " -> " + shape_str(s) + " changes element count");
    }
    auto out = detail::make_result(Tensor<Real>(std::move(s), x->value.data), x->requires_grad);
    detail::record_step(out, [x, out]() {
        x->ensure_grad();
        for (std::size_t i = 0; i < x->grad.data.size(); ++i) x->grad.data[i] += out->grad.data[i];
    });
    return out;
}

// b may broadcast: its shape must equal a trailing suffix of a's shape.
template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    auto out = detail::make_result(kernels::add(a->value, b->value), a->requires_grad || b->requires_grad);
    detail::record_step(out, [a, b, out]() {
        if (a->requires_grad) a->accumulate(out->grad);
        if (b->requires_grad) {
            b->ensure_grad();
            detail::reduce_broadcast_into(b->grad, out->grad);
        }
    });
    return out;
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    auto out = detail::make_result(kernels::mul(a->value, b->value), a->requires_grad || b->requires_grad);
    detail::record_step(out, [a, b, out]() {
        if (a->requires_grad) a->accumulate(kernels::mul(out->grad, b->value));
        if (b->requires_grad) b->accumulate(kernels::mul(out->grad, a->value));
    });
    return out;
}

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real c) {
    auto out = detail::make_result(kernels::scale(x->value, c), x->requires_grad);
    detail::record_step(out, [x, out, c]() {
        x->accumulate(kernels::scale(out->grad, c));
    });
    return out;
}

template <typename Real>
Var<Real> relu(const Var<Real>& x) {
    auto out = detail::make_result(kernels::relu(x->value), x->requires_grad);
    detail::record_step(out, [x, out]() {
        x->ensure_grad();
        for (std::size_t i = 0; i < x->grad.data.size(); ++i) {
            if (x->value.data[i] > Real(0)) x->grad.data[i] += out->grad.data[i];
        }
    });
    return out;
}

template <typename Real>
Var<Real> softmax_lastdim(const Var<Real>& x) {
    auto out = detail::make_result(kernels::softmax_lastdim(x->value), x->requires_grad);
    detail::record_step(out, [x, out]() {
        x->accumulate(kernels::softmax_backward(out->value, out->grad));
    });
    return out;
}

template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta, Real eps) {
    if (eps <= Real(0)) throw Error("layer_norm: eps must be positive");
    auto out = detail::make_result(kernels::layer_norm(x->value, gamma->value, beta->value, eps),
                                   x->requires_grad || gamma->requires_grad || beta->requires_grad);
    detail::record_step(out, [x, gamma, beta, out, eps]() {
        auto g = kernels::layer_norm_backward(x->value, gamma->value, eps, out->grad);
        if (x->requires_grad) x->accumulate(g.dx);
        if (gamma->requires_grad) gamma->accumulate(g.dgamma);
        if (beta->requires_grad) beta->accumulate(g.dbeta);
    });
    return out;
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t dim) {
    std::vector<const Tensor<Real>*> vals;
    vals.reserve(parts.size());
    bool rg = false;
    for (const auto& p : parts) {
        vals.push_back(&p->value);
        rg = rg || p->requires_grad;
    }
    auto out = detail::make_result(kernels::concat(vals, dim), rg);
    detail::record_step(out, [parts, out, dim]() {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t len = p->value.shape[dim];
            if (p->requires_grad) {
                p->accumulate(kernels::slice(out->grad, dim, off, len));
            }
            off += len;
        }
    });
    return out;
}

template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t dim, std::size_t start, std::size_t len) {
    auto out = detail::make_result(kernels::slice(x->value, dim, start, len), x->requires_grad);
    detail::record_step(out, [x, out, dim, start]() {
        x->ensure_grad();
        kernels::slice_backward_into(x->grad, out->grad, dim, start);
    });
    return out;
}

template <typename Real>
Var<Real> embedding_lookup(const Var<Real>& table, std::vector<std::size_t> ids) {
    auto out = detail::make_result(kernels::embedding_lookup(table->value, ids), table->requires_grad);
    detail::record_step(out, [table, out, ids = std::move(ids)]() {
        table->ensure_grad();
        const std::size_t d = table->value.shape[1];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Real* dst = table->grad.data.data() + ids[i] * d;
            const Real* src = out->grad.data.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return out;
}

template <typename Real>
Var<Real> sum_all(const Var<Real>& x) {
    Real s = Real(0);
    for (Real v : x->value.data) s += v;
    auto out = detail::make_result(Tensor<Real>::scalar(s), x->requires_grad);
    detail::record_step(out, [x, out]() {
        const Real g = out->grad.data[0];
        x->ensure_grad();
        for (Real& v : x->grad.data) v += g;
    });
    return out;
}

template <typename Real>
Var<Real> mean_all(const Var<Real>& x) {
    Real s = Real(0);
    for (Real v : x->value.data) s += v;
    const Real inv = Real(1) / static_cast<Real>(x->value.numel());
    auto out = detail::make_result(Tensor<Real>::scalar(s * inv), x->requires_grad);
    detail::record_step(out, [x, out, inv]() {
        const Real g = out->grad.data[0] * inv;
        x->ensure_grad();
        for (Real& v : x->grad.data) v += g;
    });
    return out;
}

// Mean cross-entropy between logit rows and integer labels, computed through
// a max-shifted log-sum-exp.
template <typename Real>
Var<Real> cross_entropy_logits(const Var<Real>& logits, const std::vector<std::size_t>& labels) {
    if (logits->value.rank() != 2) {
        throw ShapeError("cross_entropy expects rank-2 logits, got " + shape_str(logits->value.shape));
    }
    const std::size_t b = logits->value.shape[0], c = logits->value.shape[1];
    if (labels.size() != b) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) +
                         " logit rows");
    }
    for (std::size_t l : labels) {
        if (l >= c) throw ShapeError("cross_entropy: label " + std::to_string(l) + " out of range");
    }
    Real loss = Real(0);
    for (std::size_t i = 0; i < b; ++i) {
        const Real* row = logits->value.data.data() + i * c;
        Real mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        Real sum = Real(0);
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        loss += std::log(sum) + mx - row[labels[i]];
    }
    loss /= static_cast<Real>(b);
    auto out = detail::make_result(Tensor<Real>::scalar(loss), logits->requires_grad);
    detail::record_step(out, [logits, out, labels, b, c]() {
        const Real g = out->grad.data[0] / static_cast<Real>(b);
        logits->ensure_grad();
        Tensor<Real> probs = kernels::softmax_lastdim(logits->value);
        for (std::size_t i = 0; i < b; ++i) {
            Real* dst = logits->grad.data.data() + i * c;
            const Real* p = probs.data.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += g * p[j];
            dst[labels[i]] -= g;
        }
    });
    return out;
}

inline constexpr double kMaskSentinel = -1e9;

// Sets logits (t, u) with u > t to the sentinel, forbidding attention from a
// position to anything after it. Gradient flows only through kept entries.
template <typename Real>
Var<Real> apply_causal_mask(const Var<Real>& scores) {
    const Tensor<Real>& s = scores->value;
    if (s.rank() < 2 || s.shape[s.rank() - 1] != s.shape[s.rank() - 2]) {
        throw ShapeError("causal mask needs square logits, got " + shape_str(s.shape));
    }
    const std::size_t n = s.shape[s.rank() - 1];
    const std::size_t batch = s.numel() / (n * n);
    Tensor<Real> v = s;
    for (std::size_t bidx = 0; bidx < batch; ++bidx) {
        Real* m = v.data.data() + bidx * n * n;
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t u = t + 1; u < n; ++u) m[t * n + u] = Real(kMaskSentinel);
        }
    }
    auto out = detail::make_result(std::move(v), scores->requires_grad);
    detail::record_step(out, [scores, out, n, batch]() {
        scores->ensure_grad();
        for (std::size_t bidx = 0; bidx < batch; ++bidx) {
            Real* dst = scores->grad.data.data() + bidx * n * n;
            const Real* src = out->grad.data.data() + bidx * n * n;
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t u = 0; u <= t; ++u) dst[t * n + u] += src[t * n + u];
            }
        }
    });
    return out;
}

// Masks key positions >= valid_len[row] of [*, n_q, n_k] logits. valid_len has
// one entry per leading batch row, or a single entry applied everywhere.
template <typename Real>
Var<Real> apply_key_padding_mask(const Var<Real>& scores, const std::vector<std::size_t>& valid_len) {
    const Tensor<Real>& s = scores->value;
    if (s.rank() < 2) throw ShapeError("padding mask needs rank >= 2 logits");
    const std::size_t nk = s.shape[s.rank() - 1];
    const std::size_t nq = s.shape[s.rank() - 2];
    const std::size_t batch = s.numel() / (nq * nk);
    if (valid_len.size() != batch && valid_len.size() != 1) {
        throw ShapeError("padding mask: need 1 or " + std::to_string(batch) + " lengths, got " +
                         std::to_string(valid_len.size()));
    }
    Tensor<Real> v = s;
    for (std::size_t bidx = 0; bidx < batch; ++bidx) {
        const std::size_t valid = std::min(valid_len[valid_len.size() == 1 ? 0 : bidx], nk);
        Real* m = v.data.data() + bidx * nq * nk;
        for (std::size_t q = 0; q < nq; ++q) {
            for (std::size_t k = valid; k < nk; ++k) m[q * nk + k] = Real(kMaskSentinel);
        }
    }
    auto out = detail::make_result(std::move(v), scores->requires_grad);
    detail::record_step(out, [scores, out, valid_len, nq, nk, batch]() {
        scores->ensure_grad();
        for (std::size_t bidx = 0; bidx < batch; ++bidx) {
            const std::size_t valid = std::min(valid_len[valid_len.size() == 1 ? 0 : bidx], nk);
            Real* dst = scores->grad.data.data() + bidx * nq * nk;
            const Real* src = out->grad.data.data() + bidx * nq * nk;
            for (std::size_t q = 0; q < nq; ++q) {
                for (std::size_t k = 0; k < valid; ++k) dst[q * nk + k] += src[q * nk + k];
            }
        }
    });
    return out;
}

// Inverted-scale dropout. Off by default everywhere; only the training loop
// applies it, and only when the rate is set above zero.
template <typename Real>
Var<Real> dropout(const Var<Real>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw Error("dropout rate must be in [0, 1)");
    if (rate == 0.0) return x;
    const Real keep_scale = Real(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<Real>>(x->value.numel());
    Tensor<Real> v(x->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) {
        const Real m = rng.uniform01() < rate ? Real(0) : keep_scale;
        (*mask)[i] = m;
        v.data[i] = x->value.data[i] * m;
    }
    auto out = detail::make_result(std::move(v), x->requires_grad);
    detail::record_step(out, [x, out, mask]() {
        x->ensure_grad();
        for (std::size_t i = 0; i < x->grad.data.size(); ++i) x->grad.data[i] += out->grad.data[i] * (*mask)[i];
    });
    return out;
}

}  // namespace gfl
