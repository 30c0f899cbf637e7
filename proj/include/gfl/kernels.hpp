#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gfl/tensor.hpp"

// Raw numeric kernels. No tape recording and no MAC accounting happens here;
// ops.hpp layers both on top. Backward passes call these directly so that
// instrumentation only ever sees the forward pass.

namespace gfl::kernels {

// out[m,n] += a[m,p] * b[p,n]
template <typename Real>
void mm2d(Real* __restrict out, const Real* __restrict a, const Real* __restrict b,
          std::size_t m, std::size_t p, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * p;
        Real* orow = out + i * n;
        for (std::size_t k = 0; k < p; ++k) {
            const Real aik = arow[k];
            const Real* brow = b + k * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
}

// out[m,n] += a[m,p] * b[n,p]^T   (dot products of rows)
template <typename Real>
void mm2d_nt(Real* __restrict out, const Real* __restrict a, const Real* __restrict b,
             std::size_t m, std::size_t p, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * p;
        Real* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const Real* brow = b + j * p;
            Real acc = Real(0);
            for (std::size_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
            orow[j] += acc;
        }
    }
}

// out[m,n] += a[p,m]^T * b[p,n]
template <typename Real>
void mm2d_tn(Real* __restrict out, const Real* __restrict a, const Real* __restrict b,
             std::size_t m, std::size_t p, std::size_t n) {
    for (std::size_t k = 0; k < p; ++k) {
        const Real* arow = a + k * m;
        const Real* brow = b + k * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real aki = arow[i];
            Real* orow = out + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aki * brow[j];
        }
    }
}

struct MatmulDims {
    std::size_t batch;  // 1 when both operands are rank 2
    std::size_t m, p, n;
    bool a_batched, b_batched;
};

template <typename Real>
MatmulDims matmul_dims(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3) {
        throw ShapeError("matmul supports rank 2 or 3 operands, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    }
    MatmulDims d{};
    d.a_batched = a.rank() == 3;
    d.b_batched = b.rank() == 3;
    d.m = a.shape[a.rank() - 2];
    d.p = a.shape[a.rank() - 1];
    const std::size_t bp = b.shape[b.rank() - 2];
    d.n = b.shape[b.rank() - 1];
    if (d.p != bp) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    const std::size_t ba = d.a_batched ? a.shape[0] : 1;
    const std::size_t bb = d.b_batched ? b.shape[0] : 1;
    if (d.a_batched && d.b_batched && ba != bb) {
        throw ShapeError("matmul batch dimensions disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    d.batch = std::max(ba, bb);
    return d;
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    const MatmulDims d = matmul_dims(a, b);
    Shape os = (d.a_batched || d.b_batched) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    Tensor<Real> out(std::move(os));
    for (std::size_t i = 0; i < d.batch; ++i) {
        const Real* pa = a.data.data() + (d.a_batched ? i * d.m * d.p : 0);
        const Real* pb = b.data.data() + (d.b_batched ? i * d.p * d.n : 0);
        mm2d(out.data.data() + i * d.m * d.n, pa, pb, d.m, d.p, d.n);
    }
    return out;
}

template <typename Real>
Tensor<Real> transpose_last2(const Tensor<Real>& x) {
    if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape));
    Shape os = x.shape;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    const std::size_t r = x.shape[x.rank() - 2], c = x.shape[x.rank() - 1];
    const std::size_t batch = x.numel() / (r * c);
    Tensor<Real> out(std::move(os));
    for (std::size_t bidx = 0; bidx < batch; ++bidx) {
        const Real* src = x.data.data() + bidx * r * c;
        Real* dst = out.data.data() + bidx * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    return out;
}

// b broadcasts against a when b.shape is a trailing suffix of a.shape.
template <typename Real>
std::size_t broadcast_repeat(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (b.rank() > a.rank()) {
        throw ShapeError("broadcast add: " + shape_str(b.shape) + " has higher rank than " + shape_str(a.shape));
    }
    const std::size_t off = a.rank() - b.rank();
    for (std::size_t i = 0; i < b.rank(); ++i) {
        if (a.shape[off + i] != b.shape[i]) {
            throw ShapeError("broadcast add: " + shape_str(b.shape) + " is not a suffix of " + shape_str(a.shape));
        }
    }
    return a.numel() / b.numel();
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    const std::size_t rep = broadcast_repeat(a, b);
    Tensor<Real> out(a.shape);
    const std::size_t bn = b.numel();
    for (std::size_t r = 0; r < rep; ++r) {
        const Real* pa = a.data.data() + r * bn;
        Real* po = out.data.data() + r * bn;
        for (std::size_t i = 0; i < bn; ++i) po[i] = pa[i] + b.data[i];
    }
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("elementwise mul shapes differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    Tensor<Real> out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    Tensor<Real> out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] * c;
    return out;
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    Tensor<Real> out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] > Real(0) ? x.data[i] : Real(0);
    return out;
}

template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
    const std::size_t d = x.shape.back();
    const std::size_t rows = x.numel() / d;
    Tensor<Real> out(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* px = x.data.data() + r * d;
        Real* po = out.data.data() + r * d;
        Real mx = px[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, px[i]);
        Real sum = Real(0);
        for (std::size_t i = 0; i < d; ++i) {
            po[i] = std::exp(px[i] - mx);
            sum += po[i];
        }
        const Real inv = Real(1) / sum;
        for (std::size_t i = 0; i < d; ++i) po[i] *= inv;
    }
    return out;
}

// dx = (dy - sum(dy*y)) * y, per last-dim slice
template <typename Real>
Tensor<Real> softmax_backward(const Tensor<Real>& y, const Tensor<Real>& dy) {
    const std::size_t d = y.shape.back();
    const std::size_t rows = y.numel() / d;
    Tensor<Real> dx(y.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* py = y.data.data() + r * d;
        const Real* pdy = dy.data.data() + r * d;
        Real* pdx = dx.data.data() + r * d;
        Real dot = Real(0);
        for (std::size_t i = 0; i < d; ++i) dot += pdy[i] * py[i];
        for (std::size_t i = 0; i < d; ++i) pdx[i] = (pdy[i] - dot) * py[i];
    }
    return dx;
}

// Per last-dim slice: (x - mean) / sqrt(var + eps) * gamma + beta, with the
// biased (divide-by-d) variance.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta, Real eps) {
    const std::size_t d = x.shape.back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm gamma/beta must have length " + std::to_string(d) + ", got " +
                         shape_str(gamma.shape) + " and " + shape_str(beta.shape));
    }
    const std::size_t rows = x.numel() / d;
    Tensor<Real> out(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* px = x.data.data() + r * d;
        Real* po = out.data.data() + r * d;
        Real mean = Real(0);
        for (std::size_t i = 0; i < d; ++i) mean += px[i];
        mean /= Real(d);
        Real var = Real(0);
        for (std::size_t i = 0; i < d; ++i) {
            const Real c = px[i] - mean;
            var += c * c;
        }
        var /= Real(d);
        const Real inv = Real(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) po[i] = (px[i] - mean) * inv * gamma.data[i] + beta.data[i];
    }
    return out;
}

template <typename Real>
struct LayerNormGrads {
    Tensor<Real> dx, dgamma, dbeta;
};

template <typename Real>
LayerNormGrads<Real> layer_norm_backward(const Tensor<Real>& x, const Tensor<Real>& gamma, Real eps,
                                         const Tensor<Real>& dy) {
    const std::size_t d = x.shape.back();
    const std::size_t rows = x.numel() / d;
    LayerNormGrads<Real> g{Tensor<Real>(x.shape), Tensor<Real>(gamma.shape), Tensor<Real>(gamma.shape)};
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* px = x.data.data() + r * d;
        const Real* pdy = dy.data.data() + r * d;
        Real* pdx = g.dx.data.data() + r * d;
        Real mean = Real(0);
        for (std::size_t i = 0; i < d; ++i) mean += px[i];
        mean /= Real(d);
        Real var = Real(0);
        for (std::size_t i = 0; i < d; ++i) {
            const Real c = px[i] - mean;
            var += c * c;
        }
        var /= Real(d);
        const Real inv = Real(1) / std::sqrt(var + eps);
        // xhat = (x - mean) * inv; dyg = dy * gamma
        Real mean_dyg = Real(0), mean_dyg_xhat = Real(0);
        for (std::size_t i = 0; i < d; ++i) {
            const Real xhat = (px[i] - mean) * inv;
            const Real dyg = pdy[i] * gamma.data[i];
            mean_dyg += dyg;
            mean_dyg_xhat += dyg * xhat;
            g.dgamma.data[i] += pdy[i] * xhat;
            g.dbeta.data[i] += pdy[i];
        }
        mean_dyg /= Real(d);
        mean_dyg_xhat /= Real(d);
        for (std::size_t i = 0; i < d; ++i) {
            const Real xhat = (px[i] - mean) * inv;
            const Real dyg = pdy[i] * gamma.data[i];
            pdx[i] = inv * (dyg - mean_dyg - xhat * mean_dyg_xhat);
        }
    }
    return g;
}

struct ConcatDims {
    std::size_t outer, inner;  // product of dims before / after the concat axis
};

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t dim, std::size_t start, std::size_t len) {
    if (dim >= x.rank()) throw ShapeError("slice: dim out of range for " + shape_str(x.shape));
    if (len == 0 || start + len > x.shape[dim]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") invalid for " + shape_str(x.shape));
    }
    Shape os = x.shape;
    os[dim] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= x.shape[i];
    for (std::size_t i = dim + 1; i < x.rank(); ++i) inner *= x.shape[i];
    Tensor<Real> out(std::move(os));
    const std::size_t src_stride = x.shape[dim] * inner;
    const std::size_t dst_stride = len * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        const Real* src = x.data.data() + o * src_stride + start * inner;
        Real* dst = out.data.data() + o * dst_stride;
        std::copy(src, src + dst_stride, dst);
    }
    return out;
}

// Scatter-add of a slice gradient back into the full-tensor gradient.
template <typename Real>
void slice_backward_into(Tensor<Real>& dx, const Tensor<Real>& dy, std::size_t dim, std::size_t start) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= dx.shape[i];
    for (std::size_t i = dim + 1; i < dx.rank(); ++i) inner *= dx.shape[i];
    const std::size_t len = dy.shape[dim];
    const std::size_t dst_stride = dx.shape[dim] * inner;
    const std::size_t src_stride = len * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        const Real* src = dy.data.data() + o * src_stride;
        Real* dst = dx.data.data() + o * dst_stride + start * inner;
        for (std::size_t i = 0; i < src_stride; ++i) dst[i] += src[i];
    }
}

template <typename Real>
Tensor<Real> concat(const std::vector<const Tensor<Real>*>& parts, std::size_t dim) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& base = parts[0]->shape;
    if (dim >= base.size()) throw ShapeError("concat: dim out of range for " + shape_str(base));
    std::size_t total = 0;
    for (const auto* p : parts) {
        if (p->rank() != base.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < base.size(); ++i) {
            if (i != dim && p->shape[i] != base[i]) {
                throw ShapeError("concat: shape mismatch at non-concat dim: " + shape_str(p->shape) + " vs " +
                                 shape_str(base));
            }
        }
        total += p->shape[dim];
    }
    Shape os = base;
    os[dim] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= base[i];
    for (std::size_t i = dim + 1; i < base.size(); ++i) inner *= base[i];
    Tensor<Real> out(std::move(os));
    const std::size_t dst_stride = total * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = 0;
        for (const auto* p : parts) {
            const std::size_t chunk = p->shape[dim] * inner;
            std::copy(p->data.data() + o * chunk, p->data.data() + (o + 1) * chunk,
                      out.data.data() + o * dst_stride + off);
            off += chunk;
        }
    }
    return out;
}

template <typename Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& table, const std::vector<std::size_t>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(table.shape));
    if (ids.empty()) throw ShapeError("embedding lookup: empty id list");
    const std::size_t v = table.shape[0], d = table.shape[1];
    Tensor<Real> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) {
            throw ShapeError("embedding id " + std::to_string(ids[i]) + " out of range for table " +
                             shape_str(table.shape));
        }
        std::copy(table.data.data() + ids[i] * d, table.data.data() + (ids[i] + 1) * d, out.data.data() + i * d);
    }
    return out;
}

}  // namespace gfl::kernels
