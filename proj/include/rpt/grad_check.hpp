#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rpt/params.hpp"
#include "rpt/tensor.hpp"

namespace rpt {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_analytic = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool passed = false;
    double tol = 0.0;
};

// Compares analytic gradients of `loss_fn` against central finite
// differences for every element of every trainable parameter. `loss_fn`
// must rebuild the forward graph from the current parameter values each
// call and be deterministic (no active dropout). Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator so exact zero/zero
// agreements count as zero error.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter*>& params, double epsilon,
                           double tol);

}  // namespace rpt
