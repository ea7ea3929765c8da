#include "rpt/optim.hpp"

#include <cmath>

namespace rpt {

AdamW::AdamW(std::vector<Parameter*> params, OptimConfig cfg)
    : all_params_(std::move(params)), cfg_(std::move(cfg)) {
    for (Parameter* p : all_params_) {
        if (!p->trainable) continue;
        Slot slot;
        slot.param = p;
        slot.m.assign(p->tensor.size(), 0.0);
        slot.v.assign(p->tensor.size(), 0.0);
        slot.scale = 1.0;
        auto it = cfg_.group_lr_scale.find(std::string(p->group()));
        if (it != cfg_.group_lr_scale.end()) slot.scale = it->second;
        slots_.push_back(std::move(slot));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = cfg_.bias_correction ? 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_))
                                            : 1.0;
    const double bc2 = cfg_.bias_correction ? 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_))
                                            : 1.0;

    double clip_factor = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Slot& slot : slots_) {
            if (!slot.param->tensor.has_grad()) continue;
            for (double g : slot.param->tensor.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip_factor = cfg_.grad_clip / norm;
    }

    for (Slot& slot : slots_) {
        Parameter* p = slot.param;
        auto theta = p->tensor.data_mut();
        const bool has_grad = p->tensor.has_grad();
        std::span<const double> grad;
        if (has_grad) grad = p->tensor.grad();
        const double lr = cfg_.lr * slot.scale;
        const double wd = cfg_.weight_decay;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = (has_grad ? grad[i] : 0.0) * clip_factor;
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter " + p->name);
            }
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps) + lr * wd * theta[i];
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : all_params_) p->tensor.zero_grad();
}

}  // namespace rpt
