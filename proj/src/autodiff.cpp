#include "densiclip/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "autodiff_internal.hpp"
#include "matmul_kernels.hpp"

namespace densiclip::ad {

using detail::ensure_grad;
using detail::make_node;
using detail::node_of;

Var::Var(Array value, bool requires_grad) {
    check_finite(value, "leaf");
    node_ = std::make_shared<Node>();
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

const Array& Var::value() const { return node_of(*this, "value")->value; }

const Array& Var::grad() const {
    const auto& n = node_of(*this, "grad");
    if (!n->grad_ready) throw data_error("grad: backward has not populated this node");
    return n->grad;
}

void Var::assign_value(const Array& v) {
    auto& n = node_of(*this, "assign_value");
    check_same_shape(n->value, v, "assign_value");
    check_finite(v, "assign_value");
    n->value = v;
    n->grad = Array();
    n->grad_ready = false;
    n->backward_done = false;
}

Var constant(Array value) { return Var(std::move(value), false); }
Var parameter(Array value) { return Var(std::move(value), true); }

void backward(const Var& root) {
    const auto& r = node_of(root, "backward");
    if (!r->value.is_scalar())
        throw data_error("backward: root must be scalar, got shape " + r->value.shape_str());
    if (r->backward_done)
        throw data_error("backward: already run on this root; rebuild the graph before calling again");
    if (!r->requires_grad)
        throw data_error("backward: root does not depend on any differentiable leaf");

    // Topological order with parents before consumers, restricted to the
    // requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({r.get(), 0});
    visited.insert(r.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        bool descended = false;
        while (f.next_parent < f.n->parents.size()) {
            Node* p = f.n->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
                descended = true;
                break;
            }
        }
        if (!descended && f.next_parent >= f.n->parents.size()) {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        n->grad = Array::zeros(n->value.shape);
        n->grad_ready = true;
    }
    r->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
    r->backward_done = true;
}

// ---- elementwise and reduction ops ----

Var add(const Var& a, const Var& b) {
    const auto& na = node_of(a, "add");
    const auto& nb = node_of(b, "add");
    check_same_shape(na->value, nb->value, "add");
    Array out = na->value;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += nb->value.data[i];
    return Var(make_node("add", std::move(out), {na, nb}, [](Node& self) {
        for (int side = 0; side < 2; ++side) {
            Node& p = *self.parents[side];
            if (!p.requires_grad) continue;
            ensure_grad(p);
            for (size_t i = 0; i < self.grad.numel(); ++i) p.grad.data[i] += self.grad.data[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    const auto& na = node_of(a, "mul");
    const auto& nb = node_of(b, "mul");
    check_same_shape(na->value, nb->value, "mul");
    Array out = na->value;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= nb->value.data[i];
    return Var(make_node("mul", std::move(out), {na, nb}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            ensure_grad(pa);
            for (size_t i = 0; i < self.grad.numel(); ++i) pa.grad.data[i] += self.grad.data[i] * pb.value.data[i];
        }
        if (pb.requires_grad) {
            ensure_grad(pb);
            for (size_t i = 0; i < self.grad.numel(); ++i) pb.grad.data[i] += self.grad.data[i] * pa.value.data[i];
        }
    }));
}

Var scale(const Var& x, double c) {
    const auto& nx = node_of(x, "scale");
    Array out = nx->value;
    for (double& v : out.data) v *= c;
    return Var(make_node("scale", std::move(out), {nx}, [c](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (size_t i = 0; i < self.grad.numel(); ++i) p.grad.data[i] += c * self.grad.data[i];
    }));
}

Var scalar_mul(const Var& x, const Var& s) {
    const auto& nx = node_of(x, "scalar_mul");
    const auto& ns = node_of(s, "scalar_mul");
    if (!ns->value.is_scalar()) throw data_error("scalar_mul: scale must have a single element");
    const double sv = ns->value.data[0];
    Array out = nx->value;
    for (double& v : out.data) v *= sv;
    return Var(make_node("scalar_mul", std::move(out), {nx, ns}, [](Node& self) {
        Node& px = *self.parents[0];
        Node& ps = *self.parents[1];
        const double sv = ps.value.data[0];
        if (px.requires_grad) {
            ensure_grad(px);
            for (size_t i = 0; i < self.grad.numel(); ++i) px.grad.data[i] += sv * self.grad.data[i];
        }
        if (ps.requires_grad) {
            ensure_grad(ps);
            double acc = 0.0;
            for (size_t i = 0; i < self.grad.numel(); ++i) acc += self.grad.data[i] * px.value.data[i];
            ps.grad.data[0] += acc;
        }
    }));
}

Var relu(const Var& x) {
    const auto& nx = node_of(x, "relu");
    Array out = nx->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return Var(make_node("relu", std::move(out), {nx}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (size_t i = 0; i < self.grad.numel(); ++i)
            if (p.value.data[i] > 0.0) p.grad.data[i] += self.grad.data[i];
    }));
}

Var log(const Var& x) {
    const auto& nx = node_of(x, "log");
    Array out = nx->value;
    for (double& v : out.data) v = std::log(v);
    return Var(make_node("log", std::move(out), {nx}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (size_t i = 0; i < self.grad.numel(); ++i) p.grad.data[i] += self.grad.data[i] / p.value.data[i];
    }));
}

Var exp(const Var& x) {
    const auto& nx = node_of(x, "exp");
    Array out = nx->value;
    for (double& v : out.data) v = std::exp(v);
    return Var(make_node("exp", std::move(out), {nx}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (size_t i = 0; i < self.grad.numel(); ++i) p.grad.data[i] += self.grad.data[i] * self.value.data[i];
    }));
}

Var sum(const Var& x) {
    const auto& nx = node_of(x, "sum");
    double s = 0.0;
    for (double v : nx->value.data) s += v;
    return Var(make_node("sum", Array::scalar(s), {nx}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const double g = self.grad.data[0];
        for (double& v : p.grad.data) v += g;
    }));
}

Var mean(const Var& x) {
    const auto& nx = node_of(x, "mean");
    const double inv = 1.0 / static_cast<double>(nx->value.numel());
    double s = 0.0;
    for (double v : nx->value.data) s += v;
    return Var(make_node("mean", Array::scalar(s * inv), {nx}, [inv](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const double g = self.grad.data[0] * inv;
        for (double& v : p.grad.data) v += g;
    }));
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw data_error("concat: empty input list");
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    for (const auto& x : xs) parents.push_back(node_of(x, "concat"));
    const auto& shape0 = parents[0]->value.shape;
    const int rank = static_cast<int>(shape0.size());
    if (axis < 0 || axis >= rank) throw data_error("concat: axis out of range");
    std::vector<int> out_shape = shape0;
    int axis_total = 0;
    for (const auto& p : parents) {
        const auto& s = p->value.shape;
        if (static_cast<int>(s.size()) != rank) throw data_error("concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && s[d] != shape0[d])
                throw data_error("concat: non-axis dimension mismatch");
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(shape0[d]);
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<size_t>(shape0[d]);

    std::vector<size_t> blocks;
    blocks.reserve(parents.size());
    for (const auto& p : parents) blocks.push_back(static_cast<size_t>(p->value.shape[axis]) * inner);

    Array out = Array::zeros(out_shape);
    size_t axis_off = 0;
    for (size_t pi = 0; pi < parents.size(); ++pi) {
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(parents[pi]->value.data.data() + o * blocks[pi], blocks[pi],
                        out.data.data() + o * static_cast<size_t>(axis_total) * inner + axis_off);
        axis_off += blocks[pi];
    }
    return Var(make_node("concat", std::move(out), std::move(parents),
                         [axis_total, outer, inner, blocks](Node& self) {
                             size_t axis_off = 0;
                             for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                                 Node& p = *self.parents[pi];
                                 if (p.requires_grad) {
                                     ensure_grad(p);
                                     for (size_t o = 0; o < outer; ++o) {
                                         const double* src =
                                             self.grad.data.data() + o * static_cast<size_t>(axis_total) * inner + axis_off;
                                         double* dst = p.grad.data.data() + o * blocks[pi];
                                         for (size_t i = 0; i < blocks[pi]; ++i) dst[i] += src[i];
                                     }
                                 }
                                 axis_off += blocks[pi];
                             }
                         }));
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
    const auto& na = node_of(a, "matmul");
    const auto& nb = node_of(b, "matmul");
    if (na->value.rank() != 2 || nb->value.rank() != 2)
        throw data_error("matmul: expects 2-D operands, got " + na->value.shape_str() + " and " + nb->value.shape_str());
    const int m = na->value.shape[0], k = na->value.shape[1];
    const int k2 = nb->value.shape[0], n = nb->value.shape[1];
    if (k != k2)
        throw data_error("matmul: inner dimensions differ: " + na->value.shape_str() + " vs " + nb->value.shape_str());
    Array out = Array::zeros({m, n});
    detail::mm_nn(na->value.data.data(), nb->value.data.data(), out.data.data(), m, k, n);
    return Var(make_node("matmul", std::move(out), {na, nb}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            ensure_grad(pa);
            Array tmp = Array::zeros({m, k});
            detail::mm_nt(self.grad.data.data(), pb.value.data.data(), tmp.data.data(), m, n, k);
            for (size_t i = 0; i < tmp.numel(); ++i) pa.grad.data[i] += tmp.data[i];
        }
        if (pb.requires_grad) {
            ensure_grad(pb);
            Array tmp = Array::zeros({k, n});
            detail::mm_tn(pa.value.data.data(), self.grad.data.data(), tmp.data.data(), m, k, n);
            for (size_t i = 0; i < tmp.numel(); ++i) pb.grad.data[i] += tmp.data[i];
        }
    }));
}

Var matmul_nt(const Var& a, const Var& b) {
    const auto& na = node_of(a, "matmul_nt");
    const auto& nb = node_of(b, "matmul_nt");
    if (na->value.rank() != 2 || nb->value.rank() != 2)
        throw data_error("matmul_nt: expects 2-D operands, got " + na->value.shape_str() + " and " +
                         nb->value.shape_str());
    const int m = na->value.shape[0], k = na->value.shape[1];
    const int n = nb->value.shape[0];
    if (k != nb->value.shape[1])
        throw data_error("matmul_nt: row widths differ: " + na->value.shape_str() + " vs " + nb->value.shape_str());
    Array out = Array::zeros({m, n});
    detail::mm_nt(na->value.data.data(), nb->value.data.data(), out.data.data(), m, k, n);
    return Var(make_node("matmul_nt", std::move(out), {na, nb}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            ensure_grad(pa);
            Array tmp = Array::zeros({m, k});
            detail::mm_nn(self.grad.data.data(), pb.value.data.data(), tmp.data.data(), m, n, k);
            for (size_t i = 0; i < tmp.numel(); ++i) pa.grad.data[i] += tmp.data[i];
        }
        if (pb.requires_grad) {
            ensure_grad(pb);
            Array tmp = Array::zeros({n, k});
            detail::mm_tn(self.grad.data.data(), pa.value.data.data(), tmp.data.data(), m, n, k);
            for (size_t i = 0; i < tmp.numel(); ++i) pb.grad.data[i] += tmp.data[i];
        }
    }));
}

Var bias_add(const Var& x, const Var& b) {
    const auto& nx = node_of(x, "bias_add");
    const auto& nb = node_of(b, "bias_add");
    if (nx->value.rank() != 2 || nb->value.rank() != 1 || nx->value.shape[1] != nb->value.shape[0])
        throw data_error("bias_add: expects x[N,F] and b[F], got " + nx->value.shape_str() + " and " +
                         nb->value.shape_str());
    const int rows = nx->value.shape[0], cols = nx->value.shape[1];
    Array out = nx->value;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.data[static_cast<size_t>(r) * cols + c] += nb->value.data[c];
    return Var(make_node("bias_add", std::move(out), {nx, nb}, [rows, cols](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) {
            ensure_grad(px);
            for (size_t i = 0; i < self.grad.numel(); ++i) px.grad.data[i] += self.grad.data[i];
        }
        if (pb.requires_grad) {
            ensure_grad(pb);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) pb.grad.data[c] += self.grad.data[static_cast<size_t>(r) * cols + c];
        }
    }));
}

Var dense(const Var& x, const Var& w, const Var& b) { return bias_add(matmul(x, w), b); }

// ---- normalization and similarity ----

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto& nx = node_of(x, "layer_norm");
    const auto& ng = node_of(gamma, "layer_norm");
    const auto& nb = node_of(beta, "layer_norm");
    if (nx->value.rank() != 2) throw data_error("layer_norm: expects x[N,F]");
    const int rows = nx->value.shape[0], cols = nx->value.shape[1];
    if (ng->value.shape != std::vector<int>{cols} || nb->value.shape != std::vector<int>{cols})
        throw data_error("layer_norm: gamma/beta must have shape [F]");

    Array out = Array::zeros({rows, cols});
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * 2); // mu, inv_std per row
    for (int r = 0; r < rows; ++r) {
        const double* xv = nx->value.data.data() + static_cast<size_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xv[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) var += (xv[c] - mu) * (xv[c] - mu);
        var /= cols;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(r) * 2] = mu;
        (*stats)[static_cast<size_t>(r) * 2 + 1] = inv_std;
        for (int c = 0; c < cols; ++c)
            out.data[static_cast<size_t>(r) * cols + c] = ng->value.data[c] * (xv[c] - mu) * inv_std + nb->value.data[c];
    }
    return Var(make_node("layer_norm", std::move(out), {nx, ng, nb}, [rows, cols, stats](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) ensure_grad(pg);
        if (pb.requires_grad) ensure_grad(pb);
        if (px.requires_grad) ensure_grad(px);
        for (int r = 0; r < rows; ++r) {
            const double mu = (*stats)[static_cast<size_t>(r) * 2];
            const double inv_std = (*stats)[static_cast<size_t>(r) * 2 + 1];
            const double* xv = px.value.data.data() + static_cast<size_t>(r) * cols;
            const double* gy = self.grad.data.data() + static_cast<size_t>(r) * cols;
            if (pg.requires_grad || pb.requires_grad) {
                for (int c = 0; c < cols; ++c) {
                    const double xhat = (xv[c] - mu) * inv_std;
                    if (pg.requires_grad) pg.grad.data[c] += gy[c] * xhat;
                    if (pb.requires_grad) pb.grad.data[c] += gy[c];
                }
            }
            if (px.requires_grad) {
                // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
                for (int c = 0; c < cols; ++c) {
                    const double xhat = (xv[c] - mu) * inv_std;
                    const double dxh = gy[c] * pg.value.data[c];
                    mean_dxh += dxh;
                    mean_dxh_xhat += dxh * xhat;
                }
                mean_dxh /= cols;
                mean_dxh_xhat /= cols;
                double* gx = px.grad.data.data() + static_cast<size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) {
                    const double xhat = (xv[c] - mu) * inv_std;
                    const double dxh = gy[c] * pg.value.data[c];
                    gx[c] += inv_std * (dxh - mean_dxh - xhat * mean_dxh_xhat);
                }
            }
        }
    }));
}

Var softmax(const Var& x) {
    const auto& nx = node_of(x, "softmax");
    if (nx->value.rank() != 2) throw data_error("softmax: expects x[N,K]");
    const int rows = nx->value.shape[0], cols = nx->value.shape[1];
    Array out = Array::zeros({rows, cols});
    for (int r = 0; r < rows; ++r) {
        const double* xv = nx->value.data.data() + static_cast<size_t>(r) * cols;
        double* yv = out.data.data() + static_cast<size_t>(r) * cols;
        double mx = xv[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xv[c]);
        double z = 0.0;
        for (int c = 0; c < cols; ++c) {
            yv[c] = std::exp(xv[c] - mx);
            z += yv[c];
        }
        for (int c = 0; c < cols; ++c) yv[c] /= z;
    }
    return Var(make_node("softmax", std::move(out), {nx}, [rows, cols](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (int r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + static_cast<size_t>(r) * cols;
            const double* gy = self.grad.data.data() + static_cast<size_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += gy[c] * y[c];
            double* gx = p.grad.data.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) gx[c] += y[c] * (gy[c] - dot);
        }
    }));
}

Var l2_normalize(const Var& x, double eps) {
    const auto& nx = node_of(x, "l2_normalize");
    if (nx->value.rank() < 1) throw data_error("l2_normalize: needs at least rank 1");
    const int cols = nx->value.shape.back();
    const size_t rows = nx->value.numel() / static_cast<size_t>(cols);
    Array out = nx->value;
    auto inv_norms = std::make_shared<std::vector<double>>(rows);
    for (size_t r = 0; r < rows; ++r) {
        double* v = out.data.data() + r * cols;
        double sq = 0.0;
        for (int c = 0; c < cols; ++c) sq += v[c] * v[c];
        const double norm = std::sqrt(sq);
        if (norm < eps)
            throw numerical_error("l2_normalize: degenerate input, zero-norm slice at row " + std::to_string(r));
        const double inv = 1.0 / norm;
        (*inv_norms)[r] = inv;
        for (int c = 0; c < cols; ++c) v[c] *= inv;
    }
    return Var(make_node("l2_normalize", std::move(out), {nx}, [cols, rows, inv_norms](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * cols;
            const double* gy = self.grad.data.data() + r * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += gy[c] * y[c];
            const double inv = (*inv_norms)[r];
            double* gx = p.grad.data.data() + r * cols;
            for (int c = 0; c < cols; ++c) gx[c] += inv * (gy[c] - dot * y[c]);
        }
    }));
}

Var cosine_similarity(const Var& a, const Var& b) {
    const auto& na = node_of(a, "cosine_similarity");
    const auto& nb = node_of(b, "cosine_similarity");
    check_same_shape(na->value, nb->value, "cosine_similarity");
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < na->value.numel(); ++i) {
        dot += na->value.data[i] * nb->value.data[i];
        sa += na->value.data[i] * na->value.data[i];
        sb += nb->value.data[i] * nb->value.data[i];
    }
    const double norm_a = std::sqrt(sa), norm_b = std::sqrt(sb);
    if (norm_a < 1e-12 || norm_b < 1e-12)
        throw numerical_error("cosine_similarity: degenerate input, zero-norm vector");
    const double cosv = dot / (norm_a * norm_b);
    return Var(make_node("cosine_similarity", Array::scalar(cosv), {na, nb},
                         [cosv, norm_a, norm_b](Node& self) {
                             Node& pa = *self.parents[0];
                             Node& pb = *self.parents[1];
                             const double g = self.grad.data[0];
                             if (pa.requires_grad) {
                                 ensure_grad(pa);
                                 for (size_t i = 0; i < pa.value.numel(); ++i)
                                     pa.grad.data[i] += g * (pb.value.data[i] / (norm_a * norm_b) -
                                                             cosv * pa.value.data[i] / (norm_a * norm_a));
                             }
                             if (pb.requires_grad) {
                                 ensure_grad(pb);
                                 for (size_t i = 0; i < pb.value.numel(); ++i)
                                     pb.grad.data[i] += g * (pa.value.data[i] / (norm_a * norm_b) -
                                                             cosv * pb.value.data[i] / (norm_b * norm_b));
                             }
                         }));
}

Var weighted_softmax_cross_entropy(const Var& logits, const std::vector<int>& labels,
                                   const std::vector<double>& sample_weights) {
    const auto& nl = node_of(logits, "weighted_softmax_cross_entropy");
    if (nl->value.rank() != 2) throw data_error("weighted_softmax_cross_entropy: expects logits[N,K]");
    const int rows = nl->value.shape[0], cols = nl->value.shape[1];
    if (rows == 0) throw data_error("weighted_softmax_cross_entropy: empty batch");
    if (static_cast<int>(labels.size()) != rows || sample_weights.size() != labels.size())
        throw data_error("weighted_softmax_cross_entropy: labels/weights must match batch size");
    double weight_total = 0.0;
    for (int r = 0; r < rows; ++r) {
        if (labels[r] < 0 || labels[r] >= cols)
            throw data_error("weighted_softmax_cross_entropy: label out of range at row " + std::to_string(r));
        if (!(sample_weights[r] > 0.0))
            throw data_error("weighted_softmax_cross_entropy: weights must be positive");
        weight_total += sample_weights[r];
    }

    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * cols);
    double loss = 0.0;
    for (int r = 0; r < rows; ++r) {
        const double* z = nl->value.data.data() + static_cast<size_t>(r) * cols;
        double* p = probs->data() + static_cast<size_t>(r) * cols;
        double mx = z[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, z[c]);
        double sum_exp = 0.0;
        for (int c = 0; c < cols; ++c) {
            p[c] = std::exp(z[c] - mx);
            sum_exp += p[c];
        }
        for (int c = 0; c < cols; ++c) p[c] /= sum_exp;
        const double log_z = mx + std::log(sum_exp);
        loss += sample_weights[r] * (log_z - z[labels[r]]);
    }
    loss /= weight_total;
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    auto weights_copy = std::make_shared<std::vector<double>>(sample_weights);
    return Var(make_node("weighted_softmax_cross_entropy", Array::scalar(loss), {nl},
                         [rows, cols, probs, labels_copy, weights_copy, weight_total](Node& self) {
                             Node& p = *self.parents[0];
                             if (!p.requires_grad) return;
                             ensure_grad(p);
                             const double g = self.grad.data[0] / weight_total;
                             for (int r = 0; r < rows; ++r) {
                                 const double wr = (*weights_copy)[r] * g;
                                 const double* pr = probs->data() + static_cast<size_t>(r) * cols;
                                 double* gx = p.grad.data.data() + static_cast<size_t>(r) * cols;
                                 for (int c = 0; c < cols; ++c)
                                     gx[c] += wr * (pr[c] - (c == (*labels_copy)[r] ? 1.0 : 0.0));
                             }
                         }));
}

} // namespace densiclip::ad
