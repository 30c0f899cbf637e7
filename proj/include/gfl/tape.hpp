#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gfl/errors.hpp"
#include "gfl/tensor.hpp"

namespace gfl {

template <typename Real>
class Tape;

// A value in the computation graph. Gradients are accumulated (callers zero
// them explicitly), so multi-batch loops can sum contributions.
template <typename Real>
struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // empty until first needed
    bool requires_grad = false;
    const Tape<Real>* producer = nullptr;  // tape that recorded this value, null for leaves

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<Real>::zeros(value.shape);
    }

    void accumulate(const Tensor<Real>& g) {
        ensure_grad();
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
    }
};

template <typename Real>
using Var = std::shared_ptr<Node<Real>>;

template <typename Real>
Var<Real> leaf(Tensor<Real> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename Real>
Var<Real> constant(Tensor<Real> value) {
    return leaf(std::move(value), false);
}

// Append-only record of primitive ops. The recording order is a valid
// topological order of the graph, so the backward pass simply replays the
// steps in exact reverse order.
template <typename Real>
class Tape {
public:
    void record(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }

    std::size_t size() const { return steps_.size(); }

    void clear() { steps_.clear(); }

    void replay_backward() const {
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
};

template <typename Real>
inline Tape<Real>*& active_tape() {
    thread_local Tape<Real>* tape = nullptr;
    return tape;
}

// Installs a tape for the current scope; ops record while one is active.
template <typename Real>
class TapeScope {
public:
    explicit TapeScope(Tape<Real>& t) : prev_(active_tape<Real>()) { active_tape<Real>() = &t; }
    ~TapeScope() { active_tape<Real>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<Real>* prev_;
};

// Temporarily disables recording (used inside backward steps and evaluation).
template <typename Real>
class NoTapeScope {
public:
    NoTapeScope() : prev_(active_tape<Real>()) { active_tape<Real>() = nullptr; }
    ~NoTapeScope() { active_tape<Real>() = prev_; }
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape<Real>* prev_;
};

// Seeds d(loss)/d(loss) = 1 and propagates through the tape. Every reachable
// Var with requires_grad ends up with its gradient accumulated.
template <typename Real>
void backward(const Tape<Real>& tape, const Var<Real>& loss) {
    if (loss->value.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss->value.shape));
    }
    if (loss->producer != &tape) {
        throw Error("backward: loss was not produced under this tape");
    }
    loss->ensure_grad();
    loss->grad.data[0] += Real(1);
    tape.replay_backward();
}

}  // namespace gfl
