#pragma once

#include <map>
#include <string>
#include <vector>

#include "rpt/params.hpp"

namespace rpt {

struct OptimConfig {
    double lr = 0.3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool bias_correction = true;
    double grad_clip = 0.0;  // 0 = off
    // Per parameter-group multiplier on the whole update (gradient term and
    // decay term alike); group = name prefix before the first dot.
    std::map<std::string, double> group_lr_scale;
};

// Decoupled AdamW over the trainable subset of a parameter list. Frozen
// parameters get no optimizer state and are never touched. A parameter with
// no gradient buffer is treated as having zero gradient, so weight decay
// still applies.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, OptimConfig cfg);

    void step();
    void zero_grad();
    std::size_t step_count() const { return t_; }

private:
    struct Slot {
        Parameter* param;
        std::vector<double> m;
        std::vector<double> v;
        double scale;
    };

    std::vector<Slot> slots_;
    std::vector<Parameter*> all_params_;
    OptimConfig cfg_;
    std::size_t t_ = 0;
};

}  // namespace rpt
