#include "rpt/tensor.hpp"

#include <string>
#include <unordered_set>
#include <utility>

namespace rpt {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of rank " +
                             std::to_string(node_->shape.size()));
    }
    return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::data_mut() { return node_->data; }

double Tensor::value() const {
    if (size() != 1) {
        throw ContractError("value() requires a scalar tensor, got shape " +
                            shape_to_string(node_->shape));
    }
    return node_->data[0];
}

double Tensor::at(std::size_t i) const { return node_->data.at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) throw DimensionError("at(i,j) requires a rank-2 tensor");
    return node_->data.at(i * node_->shape[1] + j);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("gradient absent; run backward() first");
    return node_->grad;
}

std::span<double> Tensor::grad_mut() {
    if (!has_grad()) throw ContractError("gradient absent; run backward() first");
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
}

Tensor Tensor::detached_copy() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = false;
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (!node_) throw ContractError("backward() on an undefined tensor");
    if (node_->data.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            shape_to_string(node_->shape));
    }
    if (!node_->requires_grad) return;  // loss independent of any trainable input

    // Iterative post-order DFS: children before parents in `topo`. Branches
    // with requires_grad=false never receive gradients, so they are pruned
    // both from the order and from the sweep.
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        if (idx < cur->parents.size()) {
            detail::Node* p = cur->parents[idx].get();
            ++idx;
            if (p->requires_grad && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(cur);
            stack.pop_back();
        }
    }

    // Interior nodes are working buffers: reset them so a repeated backward
    // re-propagates from scratch. Leaves (no backprop) keep accumulating
    // until zero_grad().
    for (detail::Node* n : topo) {
        if (n->backprop) n->grad.assign(n->data.size(), 0.0);
    }
    detail::ensure_grad(*node_)[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

}  // namespace rpt
