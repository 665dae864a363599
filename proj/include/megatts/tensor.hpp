#pragma once

#include "megatts/kernels.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace megatts {

namespace detail {

// One recorded operation. `backward` reads this node's grad and accumulates
// into the parents' grads.
struct Node {
    Matrix value;
    Matrix grad;  // empty until something accumulates into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    template <typename Derived>
    void accumulate(const Eigen::MatrixBase<Derived>& g) {
        if (!requires_grad) return;
        if (grad.size() == 0) {
            grad = g;
        } else {
            grad += g;
        }
    }
};

}  // namespace detail

// Handle to a value in the computation graph. Copies share the node.
// Shapes are rows x cols; vectors are 1 x n.
class Tensor {
public:
    Tensor();
    explicit Tensor(Matrix value, bool requires_grad = false);

    static Tensor scalar(Real v) { return Tensor(Matrix::Constant(1, 1, v)); }

    const Matrix& value() const { return node_->value; }
    // Direct write access, used by optimizers and finite-difference probes.
    Matrix& mutable_value() { return node_->value; }

    bool has_grad() const { return node_->grad.size() != 0; }
    // Gradient, or zeros of the value's shape if nothing was accumulated.
    Matrix grad() const;
    void zero_grad() { node_->grad.resize(0, 0); }

    bool requires_grad() const { return node_->requires_grad; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    Real item() const;
    const char* op() const { return node_->op; }

    // Reverse-mode sweep from this scalar. Each reachable node runs its
    // backward rule once, in reverse topological order.
    void backward() const;

    // Number of distinct graph nodes reachable from here (inclusive).
    std::size_t graph_size() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace detail {

// Builds a result node. Parents are only retained when a gradient can flow.
Tensor make_result(const char* op, Matrix value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace megatts
