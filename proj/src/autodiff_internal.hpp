#pragma once

#include "densiclip/autodiff.hpp"
#include "densiclip/errors.hpp"

namespace densiclip::ad::detail {

inline NodePtr make_node(const char* op_name, Array value, std::vector<NodePtr> parents,
                         std::function<void(Node&)> backprop) {
    check_finite(value, op_name);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    n->op_name = op_name;
    for (const auto& p : n->parents)
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    return n;
}

inline void ensure_grad(Node& n) {
    if (!n.grad_ready) {
        n.grad = Array::zeros(n.value.shape);
        n.grad_ready = true;
    }
}

inline const NodePtr& node_of(const Var& v, const char* where) {
    if (!v.defined()) throw data_error(std::string(where) + ": undefined variable");
    return v.node();
}

} // namespace densiclip::ad::detail
