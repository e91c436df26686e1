// Class-weighted losses on post-activation confidences.
//
// Each sample's term is scaled by the weight of its true class, so a loss
// computed over a whole epoch is invariant to class imbalance whenever the
// weights are the exact reciprocals of the class frequencies.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/tensor.hpp"

namespace tipstate {

enum class LossKind { BinaryCrossEntropy, CategoricalCrossEntropy };

inline const char* loss_kind_name(LossKind k) {
    return k == LossKind::BinaryCrossEntropy ? "bce" : "cce";
}

struct LossSpec {
    LossKind kind = LossKind::BinaryCrossEntropy;
    std::vector<double> class_weights;  // indexed by class id; empty = all ones

    double weight(int cls, int num_classes) const {
        if (class_weights.empty()) return 1.0;
        require(static_cast<int>(class_weights.size()) == num_classes, ErrorCode::ShapeMismatch,
                "class_weights size != class count");
        return class_weights[static_cast<std::size_t>(cls)];
    }
};

inline void validate_loss_spec(const LossSpec& spec) {
    for (double w : spec.class_weights)
        require(w > 0.0, ErrorCode::BadConfig, "class weights must be strictly positive");
}

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor4<T> grad;  // d(value)/d(pred)
};

constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;

// pred: (n, classes, 1, 1) confidences in [0,1]; targets: true class per sample.
template <typename T>
LossResult<T> loss_eval(const LossSpec& spec, const Tensor4<T>& pred,
                        const std::vector<int>& targets) {
    require(pred.h == 1 && pred.w == 1, ErrorCode::ShapeMismatch,
            "loss expects an (n, classes, 1, 1) tensor");
    require(static_cast<int>(targets.size()) == pred.n, ErrorCode::LengthMismatch,
            "one target per sample required");
    validate_loss_spec(spec);
    const int C = pred.c;
    for (int t : targets)
        require(t >= 0 && t < C, ErrorCode::LabelOutOfRange,
                "target class " + std::to_string(t) + " outside [0, " + std::to_string(C) + ")");

    LossResult<T> res;
    res.grad = Tensor4<T>(pred.n, C, 1, 1);
    double total = 0.0;
    if (spec.kind == LossKind::BinaryCrossEntropy) {
        const double denom = static_cast<double>(pred.n) * C;
        for (int n = 0; n < pred.n; ++n) {
            const double w = spec.weight(targets[n], C);
            const T* row = pred.sample(n);
            T* grow = res.grad.sample(n);
            for (int c = 0; c < C; ++c) {
                const double p = row[c];
                const double pc = std::clamp(p, kProbClampLo, kProbClampHi);
                const double y = (c == targets[n]) ? 1.0 : 0.0;
                total += w * (-y * std::log(pc) - (1.0 - y) * std::log1p(-pc));
                const bool clamped = p < kProbClampLo || p > kProbClampHi;
                grow[c] = clamped ? T(0) : T(w * (-y / pc + (1.0 - y) / (1.0 - pc)) / denom);
            }
        }
        res.value = total / denom;
    } else {
        for (int n = 0; n < pred.n; ++n) {
            const double w = spec.weight(targets[n], C);
            const double p = pred.sample(n)[targets[n]];
            const double pc = std::clamp(p, kProbClampLo, kProbClampHi);
            total += w * -std::log(pc);
            const bool clamped = p < kProbClampLo || p > kProbClampHi;
            res.grad.sample(n)[targets[n]] = clamped ? T(0) : T(-w / pc / pred.n);
        }
        res.value = total / pred.n;
    }
    return res;
}

}  // namespace tipstate
