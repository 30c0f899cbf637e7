#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "gfl/blocks.hpp"
#include "gfl/dataset.hpp"
#include "gfl/ops.hpp"

namespace gfl {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t patience = 0;            // epochs without a test-accuracy improvement; 0 disables
    double stop_at_test_accuracy = 0.0;  // stop once reached; 0 disables
    double dropout = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
        if (learning_rate < 0.0) throw ConfigError("learning rate must be nonnegative");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || adam_eps <= 0) {
            throw ConfigError("invalid adam hyperparameters");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }
};

// Adam with bias correction, state aligned with the store's entry order.
template <typename Real>
class Adam {
public:
    Adam(const ParamStore<Real>& params, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& [name, var] : params) {
            m_.emplace_back(var->value.numel(), Real(0));
            v_.emplace_back(var->value.numel(), Real(0));
        }
    }

    void step(ParamStore<Real>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        std::size_t i = 0;
        for (auto& [name, var] : params) {
            var->ensure_grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double g = static_cast<double>(var->grad.data[j]);
                m[j] = static_cast<Real>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g);
                v[j] = static_cast<Real>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g);
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                var->value.data[j] -=
                    static_cast<Real>(cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
            }
            ++i;
        }
    }

    std::uint64_t steps() const { return t_; }

private:
    TrainConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

struct EpochMetrics {
    std::size_t epoch;
    double train_loss, train_accuracy;
    double test_loss, test_accuracy;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    double best_test_accuracy = 0.0;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

namespace traindetail {

template <typename Real>
std::pair<double, double> evaluate(const ClassifierModel<Real>& model,
                                   const std::vector<std::vector<std::size_t>>& xs,
                                   const std::vector<std::size_t>& ys, std::size_t batch_size) {
    NoTapeScope<Real> no_tape;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < xs.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, xs.size());
        std::vector<std::vector<std::size_t>> batch(xs.begin() + start, xs.begin() + end);
        std::vector<std::size_t> labels(ys.begin() + start, ys.begin() + end);
        auto logits = model.forward(batch);
        loss_sum += static_cast<double>(cross_entropy_logits(logits, labels)->value.data[0]) *
                    static_cast<double>(end - start);
        const std::size_t c = model.cls.n_classes;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            std::size_t arg = 0;
            for (std::size_t j = 1; j < c; ++j) {
                if (logits->value.data[i * c + j] > logits->value.data[i * c + arg]) arg = j;
            }
            if (arg == labels[i]) ++correct;
        }
    }
    return {loss_sum / static_cast<double>(xs.size()),
            static_cast<double>(correct) / static_cast<double>(xs.size())};
}

}  // namespace traindetail

// Adam training from cross-entropy gradients. Per-epoch metrics use the
// running loss/accuracy of the training pass and a full test-set evaluation.
// The parameters are left at the best-test-accuracy checkpoint. Fully
// deterministic for a fixed seed.
template <typename Real>
TrainResult train(ClassifierModel<Real>& model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (model.cls.n_classes != data.n_classes) {
        throw ConfigError("model has " + std::to_string(model.cls.n_classes) + " classes but dataset has " +
                          std::to_string(data.n_classes));
    }
    if (data.train_x.empty() || data.test_x.empty()) throw ConfigError("dataset has an empty split");

    Adam<Real> adam(model.params, cfg);
    Rng order_rng(cfg.seed);
    Rng dropout_rng(cfg.seed ^ 0x5eed5eedULL);
    TrainResult result;
    std::vector<Tensor<Real>> best_snapshot;

    std::vector<std::size_t> order(data.train_x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::vector<std::vector<std::size_t>> batch;
            std::vector<std::size_t> labels;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(data.train_x[order[i]]);
                labels.push_back(data.train_y[order[i]]);
            }

            model.params.zero_grad();
            Tape<Real> tape;
            TapeScope<Real> scope(tape);
            auto logits = model.forward(batch);
            if (cfg.dropout > 0.0) logits = dropout(logits, cfg.dropout, dropout_rng);
            auto loss = cross_entropy_logits(logits, labels);
            const double batch_loss = static_cast<double>(loss->value.data[0]);
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", sample offset " + std::to_string(start));
            }
            backward(tape, loss, model.params);
            adam.step(model.params);

            loss_sum += batch_loss * static_cast<double>(end - start);
            const std::size_t c = model.cls.n_classes;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                std::size_t arg = 0;
                for (std::size_t j = 1; j < c; ++j) {
                    if (logits->value.data[i * c + j] > logits->value.data[i * c + arg]) arg = j;
                }
                if (arg == labels[i]) ++correct;
            }
        }

        auto [test_loss, test_acc] = traindetail::evaluate(model, data.test_x, data.test_y, cfg.batch_size);
        EpochMetrics m{epoch, loss_sum / static_cast<double>(order.size()),
                       static_cast<double>(correct) / static_cast<double>(order.size()), test_loss, test_acc};
        result.history.push_back(m);

        if (test_acc > result.best_test_accuracy || best_snapshot.empty()) {
            result.best_test_accuracy = test_acc;
            result.best_epoch = epoch;
            best_snapshot.clear();
            for (const auto& [name, var] : model.params) best_snapshot.push_back(var->value);
        }
        if (cfg.stop_at_test_accuracy > 0.0 && test_acc >= cfg.stop_at_test_accuracy) break;
        if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }

    std::size_t i = 0;
    for (auto& [name, var] : model.params) var->value = best_snapshot[i++];
    return result;
}

// epoch,split,loss,accuracy
inline void write_metrics_csv(const TrainResult& result, std::ostream& out) {
    out << "epoch,split,loss,accuracy\n";
    out.precision(17);
    for (const auto& m : result.history) {
        out << m.epoch << ",train," << m.train_loss << ',' << m.train_accuracy << "\n";
        out << m.epoch << ",test," << m.test_loss << ',' << m.test_accuracy << "\n";
    }
}

}  // namespace gfl
