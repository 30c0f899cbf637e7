#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gfl/param_store.hpp"
#include "gfl/tape.hpp"

namespace gfl {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "name[i]" of the worst element
};

namespace detail {

// Relative error with a floor on the denominator: finite-difference noise on
// near-zero gradients must not register as disagreement.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
}

}  // namespace detail

// Central finite-difference check of every parameter gradient against the
// tape. make_loss must rebuild the forward graph from the current parameter
// values and return a scalar; it is called once under a tape and then twice
// per parameter element with the tape disabled.
template <typename Real, typename LossFn>
GradCheckReport check_param_gradients(ParamStore<Real>& params, LossFn&& make_loss, double h = 1e-5) {
    static_assert(sizeof(Real) == 8, "gradient checks require 64-bit elements");
    params.zero_grad();
    Tape<Real> tape;
    {
        TapeScope<Real> scope(tape);
        Var<Real> loss = make_loss();
        backward(tape, loss, params);
    }
    GradCheckReport rep;
    NoTapeScope<Real> no_tape;
    for (auto& [name, var] : params) {
        for (std::size_t i = 0; i < var->value.data.size(); ++i) {
            const Real saved = var->value.data[i];
            var->value.data[i] = saved + static_cast<Real>(h);
            const double up = static_cast<double>(make_loss()->value.data[0]);
            var->value.data[i] = saved - static_cast<Real>(h);
            const double down = static_cast<double>(make_loss()->value.data[0]);
            var->value.data[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double err = detail::rel_err(static_cast<double>(var->grad.data[i]), fd);
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst = name + "[" + std::to_string(i) + "]";
            }
            ++rep.checked;
        }
    }
    return rep;
}

// Same check for explicit leaf inputs (primitives have no parameters).
template <typename Real, typename LossFn>
GradCheckReport check_input_gradients(const std::vector<Var<Real>>& inputs, LossFn&& make_loss, double h = 1e-5) {
    static_assert(sizeof(Real) == 8, "gradient checks require 64-bit elements");
    for (const auto& in : inputs) {
        in->requires_grad = true;
        in->ensure_grad();
        std::fill(in->grad.data.begin(), in->grad.data.end(), Real(0));
    }
    Tape<Real> tape;
    {
        TapeScope<Real> scope(tape);
        Var<Real> loss = make_loss();
        backward(tape, loss);
    }
    GradCheckReport rep;
    NoTapeScope<Real> no_tape;
    std::size_t idx = 0;
    for (const auto& var : inputs) {
        for (std::size_t i = 0; i < var->value.data.size(); ++i) {
            const Real saved = var->value.data[i];
            var->value.data[i] = saved + static_cast<Real>(h);
            const double up = static_cast<double>(make_loss()->value.data[0]);
            var->value.data[i] = saved - static_cast<Real>(h);
            const double down = static_cast<double>(make_loss()->value.data[0]);
            var->value.data[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double err = detail::rel_err(static_cast<double>(var->grad.data[i]), fd);
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst = "input" + std::to_string(idx) + "[" + std::to_string(i) + "]";
            }
            ++rep.checked;
        }
        ++idx;
    }
    return rep;
}

}  // namespace gfl
