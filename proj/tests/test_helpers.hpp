#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rpt/grad_check.hpp"
#include "rpt/harness.hpp"

namespace rpt::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Finite-difference check for a single op applied to `inputs`. The loss is
// a fixed random weighting of the op output so transposed or permuted
// gradients cannot cancel out.
inline double op_fd_max_rel_err(const std::function<Tensor()>& apply,
                                std::vector<Tensor> inputs, std::uint64_t weight_seed,
                                double eps = 1e-5) {
    Tensor probe = apply();
    Rng wrng(weight_seed);
    Tensor weights = random_tensor(probe.shape(), wrng, -1.0, 1.0, false);
    auto loss_fn = [&]() { return ops::sum(ops::mul(apply(), weights)); };

    std::vector<Parameter> params;
    params.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        params.push_back(Parameter{"input." + std::to_string(i), inputs[i], true});
    }
    std::vector<Parameter*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    return grad_check(loss_fn, ptrs, eps, 1.0).max_rel_err;
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::path("test-tmp") / tag;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Pretrained frozen backbones for integration tests, cached on disk so the
// cost is paid once per build tree.
std::shared_ptr<const Backbone> test_backbone(Arch arch);
RunConfig test_run_config();

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) {
            return false;
        }
    }
    return true;
}

}  // namespace rpt::test
