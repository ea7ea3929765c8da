#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "rpt/errors.hpp"
#include "rpt/tensor.hpp"

namespace rpt {

// A named, optionally trainable tensor. `trainable` and the tensor's
// requires_grad flag are kept in lockstep so frozen weights never receive
// gradients in the first place.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;

    void set_trainable(bool on) {
        trainable = on;
        tensor.set_requires_grad(on);
    }

    // Group prefix, e.g. "prompt" for "prompt.P". Used for per-group
    // learning-rate scaling and the freeze bookkeeping.
    std::string_view group() const {
        auto dot = name.find('.');
        return dot == std::string::npos ? std::string_view(name)
                                        : std::string_view(name).substr(0, dot);
    }
};

// Ordered, unique-by-name parameter list. Registration order is the
// canonical order for serialization and optimizer state.
class ParamRegistry {
public:
    Parameter& add(std::string name, Tensor tensor, bool trainable = true) {
        if (find(name) != nullptr) {
            throw ContractError("duplicate parameter name: " + name);
        }
        tensor.set_requires_grad(trainable);
        params_.push_back(Parameter{std::move(name), std::move(tensor), trainable});
        return params_.back();
    }

    Parameter* find(std::string_view name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    const Parameter* find(std::string_view name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    Parameter& at(std::string_view name) {
        Parameter* p = find(name);
        if (!p) throw ContractError("unknown parameter: " + std::string(name));
        return *p;
    }

    const Parameter& at(std::string_view name) const {
        const Parameter* p = find(name);
        if (!p) throw ContractError("unknown parameter: " + std::string(name));
        return *p;
    }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }

    void append_pointers(std::vector<Parameter*>& out) {
        for (auto& p : params_) out.push_back(&p);
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

private:
    std::vector<Parameter> params_;
};

inline void check_unique_names(const std::vector<Parameter*>& params) {
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = i + 1; j < params.size(); ++j)
            if (params[i]->name == params[j]->name)
                throw ContractError("duplicate parameter name: " + params[i]->name);
}

}  // namespace rpt
