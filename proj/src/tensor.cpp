#include "megatts/tensor.hpp"

#include "megatts/errors.hpp"

#include <unordered_set>

namespace megatts {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    if (value.size() == 0) throw DimensionError("tensor dims must be positive");
    if (!value.allFinite()) throw NumericError("non-finite value in tensor");
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Matrix Tensor::grad() const {
    if (has_grad()) return node_->grad;
    return Matrix::Zero(rows(), cols());
}

Real Tensor::item() const {
    if (node_->value.size() != 1) throw DimensionError("item() needs a 1x1 tensor");
    return node_->value(0, 0);
}

namespace {

std::vector<detail::Node*> topo_order(detail::Node* root) {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void Tensor::backward() const {
    if (node_->value.size() != 1) throw DimensionError("backward() needs a scalar loss");
    if (!node_->requires_grad) return;
    auto order = topo_order(node_.get());
    node_->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

std::size_t Tensor::graph_size() const {
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        for (auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    return seen.size();
}

namespace detail {

Tensor make_result(const char* op, Matrix value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
    if (!value.allFinite()) throw NumericError(std::string("non-finite output from ") + op);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor::from_node(std::move(node));
}

}  // namespace detail

}  // namespace megatts
