#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "densiclip/array.hpp"

namespace densiclip::ad {

// One vertex of the reverse-mode computation graph. Nodes are created
// through the op functions below and owned via shared_ptr by their
// consumers, so the graph is acyclic by construction. Values are immutable
// after construction except through the parameter-update entry points used
// by the optimizers.
struct Node {
    Array value;
    Array grad; // materialized by backward(); same shape as value afterwards
    bool requires_grad = false;
    bool grad_ready = false;    // grad buffer allocated and zeroed for the current sweep
    bool backward_done = false; // set on the root once a sweep has completed
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this->grad into the parents' grad buffers.
    std::function<void(Node&)> backprop;
    const char* op_name = "leaf";
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantics handle over a graph node.
class Var {
public:
    Var() = default;
    Var(Array value, bool requires_grad); // leaf
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    const Array& value() const;
    const Array& grad() const; // throws unless backward() has populated it
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const std::vector<int>& shape() const { return value().shape; }
    const NodePtr& node() const { return node_; }

    // Parameter-update entry point; invalidates graphs built on the old value.
    void assign_value(const Array& v);

private:
    NodePtr node_;
};

// Constant leaf that never receives gradients.
Var constant(Array value);
// Trainable leaf.
Var parameter(Array value);

// Reverse topological accumulation from a scalar root. Gradients of every
// node reachable from the root that requires grad are zeroed and then
// accumulated. A second call on the same root without rebuilding the graph
// is an error.
void backward(const Var& root);

// ---- op set ----

// matmul: a[M,K] @ b[K,N] -> [M,N]
Var matmul(const Var& a, const Var& b);
// matmul_nt: a[M,K] @ transpose(b[N,K]) -> [M,N] (rows against rows)
Var matmul_nt(const Var& a, const Var& b);
// dense affine layer: x[N,in] @ w[in,out] + b[out]
Var dense(const Var& x, const Var& w, const Var& b);
// bias_add: x[N,F] + b[F] broadcast over rows (the only tensor broadcast)
Var bias_add(const Var& x, const Var& b);
// conv2d: x[N,Cin,H,W] * w[Cout,Cin,kh,kw] + b[Cout], im2col + matmul path
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var relu(const Var& x);
// max_pool2d: x[N,C,H,W], square window, ties resolved to the first
// row-major element
Var max_pool2d(const Var& x, int window, int stride);
// global_avg_pool: x[N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& x);
// layer_norm over the last axis of x[N,F] with learnable gamma[F], beta[F]
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// softmax over the last axis of x[N,K]
Var softmax(const Var& x);
Var log(const Var& x);
Var exp(const Var& x);
Var add(const Var& a, const Var& b);       // elementwise, same shape
Var mul(const Var& a, const Var& b);       // elementwise, same shape
Var scale(const Var& x, double c);         // constant scale
Var scalar_mul(const Var& x, const Var& s); // scale by a 1-element node
Var concat(const std::vector<Var>& xs, int axis);
Var sum(const Var& x);  // all elements -> scalar
Var mean(const Var& x); // all elements -> scalar
// l2_normalize along the last axis; a zero slice is a degenerate input
Var l2_normalize(const Var& x, double eps = 1e-12);
// cosine similarity of two equal-shape vectors -> scalar
Var cosine_similarity(const Var& a, const Var& b);
// Class-weighted softmax cross-entropy over logits[N,K]:
//   loss = sum_i w_i * CE(softmax(row_i), label_i) / sum_i w_i
Var weighted_softmax_cross_entropy(const Var& logits, const std::vector<int>& labels,
                                   const std::vector<double>& sample_weights);

} // namespace densiclip::ad
