#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gfl/errors.hpp"

namespace gfl {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

// Dense row-major n-dimensional array. Every dimension must be positive;
// a scalar is represented as shape {1}.
template <typename Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)) {
        validate_shape();
        data.assign(shape_numel(shape), Real(0));
    }

    Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, Real v) {
        Tensor t(std::move(s));
        for (Real& x : t.data) x = v;
        return t;
    }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = Real(1);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const { return shape.at(i); }

    // Matrix accessors for the common rank-2 case.
    Real& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const Real& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (Real v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void check_finite(const char* context) const {
        if (!all_finite()) {
            throw Error(std::string("non-finite values produced by ") + context);
        }
    }

private:
    void validate_shape() const {
        if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }
};

template <typename Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff shapes differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    }
    return m;
}

}  // namespace gfl
