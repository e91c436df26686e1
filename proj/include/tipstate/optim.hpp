// Gradient-descent update rules with their published defaults, plus the
// per-epoch exponential learning-rate decay.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/network.hpp"

namespace tipstate {

enum class OptimizerRule { SGD, Adam, RMSprop, Adadelta, Adagrad };

inline const char* optimizer_rule_name(OptimizerRule r) {
    switch (r) {
        case OptimizerRule::SGD: return "sgd";
        case OptimizerRule::Adam: return "adam";
        case OptimizerRule::RMSprop: return "rmsprop";
        case OptimizerRule::Adadelta: return "adadelta";
        case OptimizerRule::Adagrad: return "adagrad";
    }
    return "?";
}

inline OptimizerRule optimizer_rule_from_name(const std::string& s) {
    if (s == "sgd") return OptimizerRule::SGD;
    if (s == "adam") return OptimizerRule::Adam;
    if (s == "rmsprop") return OptimizerRule::RMSprop;
    if (s == "adadelta") return OptimizerRule::Adadelta;
    if (s == "adagrad") return OptimizerRule::Adagrad;
    fail(ErrorCode::BadConfig, "unknown optimizer '" + s + "'");
}

// lr per epoch: initial * decay^epoch; decay 1 disables.
inline double lr_schedule(double initial_lr, int epoch, double decay) {
    require(decay > 0.0 && decay <= 1.0, ErrorCode::BadConfig, "decay must lie in (0, 1]");
    return initial_lr * std::pow(decay, epoch);
}

template <typename T>
class Optimizer {
public:
    // lr 0 is legal: it degenerates every rule to a no-op update, which the
    // training pipeline relies on as a "do nothing" control.
    Optimizer(OptimizerRule rule, double learning_rate) : rule_(rule), lr_(learning_rate) {
        require(lr_ >= 0.0, ErrorCode::BadConfig, "learning rate must be nonnegative");
    }

    OptimizerRule rule() const { return rule_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) {
        require(lr >= 0.0, ErrorCode::BadConfig, "learning rate must be nonnegative");
        lr_ = lr;
    }
    long step_count() const { return step_; }

    // One update over every parameter view. Accumulator slots attach to
    // views by position, so the view list must be stable across calls.
    void step(std::vector<ParamView<T>>& views) {
        if (slots_.empty()) {
            slots_.resize(views.size());
            for (std::size_t i = 0; i < views.size(); ++i) slots_[i].size = views[i].size;
        }
        require(slots_.size() == views.size(), ErrorCode::ShapeMismatch,
                "parameter view count changed between steps");
        ++step_;
        for (std::size_t i = 0; i < views.size(); ++i) {
            auto& view = views[i];
            auto& slot = slots_[i];
            require(slot.size == view.size, ErrorCode::ShapeMismatch,
                    "parameter size changed between steps");
            switch (rule_) {
                case OptimizerRule::SGD:
                    for (std::size_t k = 0; k < view.size; ++k)
                        view.data[k] -= T(lr_ * double(view.grad[k]));
                    break;
                case OptimizerRule::Adam: {
                    slot.ensure(view.size, 2);
                    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                    const double c1 = 1.0 - std::pow(b1, double(step_));
                    const double c2 = 1.0 - std::pow(b2, double(step_));
                    for (std::size_t k = 0; k < view.size; ++k) {
                        const double g = view.grad[k];
                        slot.a[k] = b1 * slot.a[k] + (1.0 - b1) * g;
                        slot.b[k] = b2 * slot.b[k] + (1.0 - b2) * g * g;
                        const double mhat = slot.a[k] / c1;
                        const double vhat = slot.b[k] / c2;
                        view.data[k] -= T(lr_ * mhat / (std::sqrt(vhat) + eps));
                    }
                    break;
                }
                case OptimizerRule::RMSprop: {
                    slot.ensure(view.size, 1);
                    const double rho = 0.9, eps = 1e-8;
                    for (std::size_t k = 0; k < view.size; ++k) {
                        const double g = view.grad[k];
                        slot.a[k] = rho * slot.a[k] + (1.0 - rho) * g * g;
                        view.data[k] -= T(lr_ * g / (std::sqrt(slot.a[k]) + eps));
                    }
                    break;
                }
                case OptimizerRule::Adagrad: {
                    slot.ensure(view.size, 1);
                    const double eps = 1e-8;
                    for (std::size_t k = 0; k < view.size; ++k) {
                        const double g = view.grad[k];
                        slot.a[k] += g * g;
                        view.data[k] -= T(lr_ * g / (std::sqrt(slot.a[k]) + eps));
                    }
                    break;
                }
                case OptimizerRule::Adadelta: {
                    slot.ensure(view.size, 2);
                    const double rho = 0.95, eps = 1e-6;
                    for (std::size_t k = 0; k < view.size; ++k) {
                        const double g = view.grad[k];
                        slot.a[k] = rho * slot.a[k] + (1.0 - rho) * g * g;
                        const double dx =
                            -std::sqrt(slot.b[k] + eps) / std::sqrt(slot.a[k] + eps) * g;
                        slot.b[k] = rho * slot.b[k] + (1.0 - rho) * dx * dx;
                        view.data[k] += T(lr_ * dx);
                    }
                    break;
                }
            }
        }
    }

private:
    struct Slot {
        std::size_t size = 0;
        std::vector<double> a, b;  // rule-specific accumulators
        void ensure(std::size_t n, int count) {
            if (a.empty()) a.assign(n, 0.0);
            if (count > 1 && b.empty()) b.assign(n, 0.0);
        }
    };

    OptimizerRule rule_;
    double lr_;
    long step_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace tipstate
