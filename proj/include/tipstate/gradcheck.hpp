// Central finite-difference validation of every analytic gradient.
// Double precision only: the difference quotient needs the headroom.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tipstate/loss.hpp"
#include "tipstate/network.hpp"

namespace tipstate {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::vector<GradCheckEntry> failures;
    std::size_t checked = 0;
};

namespace detail {

inline double grad_rel_err(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    if (diff < 1e-8) return 0.0;  // below finite-difference noise
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace detail

// Hook for validating the checker itself: mutates the analytic gradients
// before they are compared, so a deliberate corruption must be flagged.
using GradTamper = std::function<void(std::vector<ParamView<double>>&)>;

// Compares d(loss)/d(theta) from backward() against (L(theta+h)-L(theta-h))/2h
// for every parameter coordinate.
inline GradCheckReport gradient_check(NetworkGraph<double>& net, const Tensor4<double>& input,
                                      const std::vector<int>& targets, const LossSpec& spec,
                                      double tolerance = 1e-4, double h = 1e-5,
                                      const GradTamper& tamper = {}) {
    net.mode = Mode::Train;
    auto views = net.params();

    const Tensor4<double> pred = net.forward(input);
    const LossResult<double> base = loss_eval(spec, pred, targets);
    net.backward(base.grad);
    if (tamper) tamper(views);

    std::vector<std::vector<double>> analytic(views.size());
    for (std::size_t i = 0; i < views.size(); ++i)
        analytic[i].assign(views[i].grad, views[i].grad + views[i].size);

    GradCheckReport report;
    auto loss_at = [&]() {
        const Tensor4<double> p = net.forward(input);
        return loss_eval(spec, p, targets).value;
    };
    for (std::size_t i = 0; i < views.size(); ++i) {
        for (std::size_t k = 0; k < views[i].size; ++k) {
            double& theta = views[i].data[k];
            const double saved = theta;
            theta = saved + h;
            const double lp = loss_at();
            theta = saved - h;
            const double lm = loss_at();
            theta = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double rel = detail::grad_rel_err(analytic[i][k], numeric);
            ++report.checked;
            report.max_rel_err = std::max(report.max_rel_err, rel);
            if (rel >= tolerance) {
                report.pass = false;
                report.failures.push_back({views[i].name, k, analytic[i][k], numeric, rel});
            }
        }
    }
    return report;
}

// Same check for d(loss)/d(input), via backward's return value.
inline GradCheckReport gradient_check_input(NetworkGraph<double>& net,
                                            const Tensor4<double>& input,
                                            const std::vector<int>& targets, const LossSpec& spec,
                                            double tolerance = 1e-4, double h = 1e-5) {
    net.mode = Mode::Train;
    const Tensor4<double> pred = net.forward(input);
    const LossResult<double> base = loss_eval(spec, pred, targets);
    const Tensor4<double> gin = net.backward(base.grad);

    GradCheckReport report;
    Tensor4<double> probe = input;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        const double saved = probe.v[k];
        probe.v[k] = saved + h;
        const double lp = loss_eval(spec, net.forward(probe), targets).value;
        probe.v[k] = saved - h;
        const double lm = loss_eval(spec, net.forward(probe), targets).value;
        probe.v[k] = saved;
        const double numeric = (lp - lm) / (2.0 * h);
        const double rel = detail::grad_rel_err(gin.v[k], numeric);
        ++report.checked;
        report.max_rel_err = std::max(report.max_rel_err, rel);
        if (rel >= tolerance) {
            report.pass = false;
            report.failures.push_back({"input", k, gin.v[k], numeric, rel});
        }
    }
    return report;
}

}  // namespace tipstate
