#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rpt/errors.hpp"

namespace rpt {

using Shape = std::vector<std::size_t>;

namespace detail {

// One node of the reverse-mode tape. Ops allocate a fresh node per output;
// `backprop` reads this node's grad and accumulates into the parents.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty = absent; allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

inline std::vector<double>& ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
    return n.grad;
}

}  // namespace detail

// Thread-local switch that turns off tape recording; used for evaluation
// passes where gradients are never needed.
struct GradMode {
    static bool enabled();
    static void set(bool on);
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense row-major f64 tensor with an optional gradient buffer. Copies are
// shallow (shared node) which is what the graph wants; use detached_copy()
// for a value-only deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t size() const;

    std::span<const double> data() const;
    // Mutable access to the raw values. Meant for initialization and
    // optimizer updates on leaves, not for tensors inside a live graph.
    std::span<double> data_mut();

    double value() const;  // scalar tensors only
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();  // drops the gradient buffer entirely

    // Reverse-mode sweep from a scalar. Accumulates into the grad buffers of
    // every requires_grad tensor reachable from this one; repeated calls
    // keep accumulating until zero_grad().
    void backward() const;

    Tensor detached_copy() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

}  // namespace rpt
