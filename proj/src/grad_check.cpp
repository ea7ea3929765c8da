#include "rpt/grad_check.hpp"

#include <cmath>

namespace rpt {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter*>& params, double epsilon,
                           double tol) {
    GradCheckReport report;
    report.tol = tol;

    for (Parameter* p : params) p->tensor.zero_grad();
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.value())) {
        throw NumericError("grad_check: non-finite loss");
    }
    loss.backward();

    // Snapshot analytic gradients before the finite-difference sweep starts
    // mutating parameter values.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) {
        if (!p->trainable) {
            analytic.emplace_back();
            continue;
        }
        if (p->tensor.has_grad()) {
            auto g = p->tensor.grad();
            analytic.emplace_back(g.begin(), g.end());
        } else {
            analytic.emplace_back(p->tensor.size(), 0.0);
        }
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        if (!p->trainable) continue;
        GradCheckEntry entry;
        entry.name = p->name;
        auto values = p->tensor.data_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + epsilon;
            const double up = loss_fn().value();
            values[i] = saved - epsilon;
            const double down = loss_fn().value();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[pi][i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                throw NumericError("grad_check: non-finite gradient for parameter " + p->name);
            }
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(a - numeric) / denom;
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::fabs(a));
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }

    for (Parameter* p : params) p->tensor.zero_grad();
    report.passed = report.max_rel_err < tol;
    return report;
}

}  // namespace rpt
