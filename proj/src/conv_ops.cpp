#include <cmath>
#include <cstring>
#include <memory>

#include "autodiff_internal.hpp"
#include "densiclip/parallel.hpp"
#include "matmul_kernels.hpp"

namespace densiclip::ad {

using detail::ensure_grad;
using detail::make_node;
using detail::node_of;

namespace {

struct ConvDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int ho, wo;
    size_t cols_rows() const { return static_cast<size_t>(cin) * kh * kw; }
    size_t cols_cols() const { return static_cast<size_t>(ho) * wo; }
};

// cols[cin*kh*kw, ho*wo] for one image, zero-padded borders
void im2col(const double* img, const ConvDims& d, double* cols) {
    const size_t hw = d.cols_cols();
    for (int c = 0; c < d.cin; ++c) {
        const double* plane = img + static_cast<size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                double* row = cols + (static_cast<size_t>(c) * d.kh * d.kw + static_cast<size_t>(ki) * d.kw + kj) * hw;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ki;
                    double* out = row + static_cast<size_t>(oy) * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(out, 0, sizeof(double) * d.wo);
                        continue;
                    }
                    const double* src = plane + static_cast<size_t>(iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pad + kj;
                        out[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add of cols gradients back into an image gradient
void col2im_add(const double* cols, const ConvDims& d, double* img_grad) {
    const size_t hw = d.cols_cols();
    for (int c = 0; c < d.cin; ++c) {
        double* plane = img_grad + static_cast<size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const double* row =
                    cols + (static_cast<size_t>(c) * d.kh * d.kw + static_cast<size_t>(ki) * d.kw + kj) * hw;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ki;
                    if (iy < 0 || iy >= d.h) continue;
                    double* dst = plane + static_cast<size_t>(iy) * d.w;
                    const double* src = row + static_cast<size_t>(oy) * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pad + kj;
                        if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& nx = node_of(x, "conv2d");
    const auto& nw = node_of(w, "conv2d");
    const auto& nb = node_of(b, "conv2d");
    if (nx->value.rank() != 4) throw data_error("conv2d: expects x[N,Cin,H,W], got " + nx->value.shape_str());
    if (nw->value.rank() != 4) throw data_error("conv2d: expects w[Cout,Cin,kh,kw], got " + nw->value.shape_str());
    if (stride < 1) throw data_error("conv2d: stride must be >= 1");
    if (pad < 0) throw data_error("conv2d: pad must be >= 0");

    ConvDims d;
    d.n = nx->value.shape[0];
    d.cin = nx->value.shape[1];
    d.h = nx->value.shape[2];
    d.w = nx->value.shape[3];
    d.cout = nw->value.shape[0];
    d.kh = nw->value.shape[2];
    d.kw = nw->value.shape[3];
    d.stride = stride;
    d.pad = pad;
    if (nw->value.shape[1] != d.cin)
        throw data_error("conv2d: weight input channels " + std::to_string(nw->value.shape[1]) +
                         " do not match image channels " + std::to_string(d.cin));
    if (nb->value.shape != std::vector<int>{d.cout}) throw data_error("conv2d: bias must have shape [Cout]");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw data_error("conv2d: kernel larger than padded input");

    const size_t ck = d.cols_rows();
    const size_t hw = d.cols_cols();
    const size_t in_plane = static_cast<size_t>(d.cin) * d.h * d.w;
    const size_t out_plane = static_cast<size_t>(d.cout) * hw;

    Array out = Array::zeros({d.n, d.cout, d.ho, d.wo});
    parallel_for(0, static_cast<size_t>(d.n), [&](size_t img) {
        std::vector<double> cols(ck * hw);
        im2col(nx->value.data.data() + img * in_plane, d, cols.data());
        double* dst = out.data.data() + img * out_plane;
        detail::mm_nn(nw->value.data.data(), cols.data(), dst, d.cout, static_cast<int>(ck), static_cast<int>(hw));
        for (int c = 0; c < d.cout; ++c) {
            const double bias = nb->value.data[c];
            double* row = dst + static_cast<size_t>(c) * hw;
            for (size_t i = 0; i < hw; ++i) row[i] += bias;
        }
    });

    return Var(make_node("conv2d", std::move(out), {nx, nw, nb}, [d, ck, hw, in_plane, out_plane](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        const bool need_x = px.requires_grad;
        const bool need_w = pw.requires_grad;
        const bool need_b = pb.requires_grad;
        if (need_x) ensure_grad(px);
        if (need_w) ensure_grad(pw);
        if (need_b) ensure_grad(pb);

        // per-image partials, reduced afterwards in index order
        std::vector<std::vector<double>> gw_parts;
        if (need_w) gw_parts.assign(static_cast<size_t>(d.n), {});
        parallel_for(0, static_cast<size_t>(d.n), [&](size_t img) {
            const double* gy = self.grad.data.data() + img * out_plane;
            std::vector<double> cols(ck * hw);
            if (need_w) {
                im2col(px.value.data.data() + img * in_plane, d, cols.data());
                gw_parts[img].assign(static_cast<size_t>(d.cout) * ck, 0.0);
                detail::mm_nt(gy, cols.data(), gw_parts[img].data(), d.cout, static_cast<int>(hw),
                              static_cast<int>(ck));
            }
            if (need_x) {
                detail::mm_tn(pw.value.data.data(), gy, cols.data(), d.cout, static_cast<int>(ck),
                              static_cast<int>(hw));
                col2im_add(cols.data(), d, px.grad.data.data() + img * in_plane);
            }
        });
        if (need_w)
            for (int img = 0; img < d.n; ++img)
                for (size_t i = 0; i < pw.grad.numel(); ++i) pw.grad.data[i] += gw_parts[img][i];
        if (need_b)
            for (int img = 0; img < d.n; ++img) {
                const double* gy = self.grad.data.data() + img * out_plane;
                for (int c = 0; c < d.cout; ++c) {
                    double s = 0.0;
                    const double* row = gy + static_cast<size_t>(c) * hw;
                    for (size_t i = 0; i < hw; ++i) s += row[i];
                    pb.grad.data[c] += s;
                }
            }
    }));
}

Var max_pool2d(const Var& x, int window, int stride) {
    const auto& nx = node_of(x, "max_pool2d");
    if (nx->value.rank() != 4) throw data_error("max_pool2d: expects x[N,C,H,W]");
    if (window < 1 || stride < 1) throw data_error("max_pool2d: window and stride must be >= 1");
    const int n = nx->value.shape[0], c = nx->value.shape[1], h = nx->value.shape[2], w = nx->value.shape[3];
    if (h < window || w < window) throw data_error("max_pool2d: window larger than input");
    const int ho = (h - window) / stride + 1;
    const int wo = (w - window) / stride + 1;

    Array out = Array::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(out.numel());
    const size_t planes = static_cast<size_t>(n) * c;
    parallel_for(0, planes, [&](size_t plane) {
        const double* src = nx->value.data.data() + plane * h * w;
        double* dst = out.data.data() + plane * ho * wo;
        int32_t* arg = argmax->data() + plane * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const int y0 = oy * stride, x0 = ox * stride;
                double best = src[static_cast<size_t>(y0) * w + x0];
                int32_t best_idx = y0 * w + x0;
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx) {
                        const int32_t idx = (y0 + ky) * w + (x0 + kx);
                        if (src[idx] > best) {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                dst[static_cast<size_t>(oy) * wo + ox] = best;
                arg[static_cast<size_t>(oy) * wo + ox] = best_idx;
            }
        }
    });
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(ho) * wo;
    return Var(make_node("max_pool2d", std::move(out), {nx}, [planes, in_plane, out_plane, argmax](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        parallel_for(0, planes, [&](size_t plane) {
            double* gx = p.grad.data.data() + plane * in_plane;
            const double* gy = self.grad.data.data() + plane * out_plane;
            const int32_t* arg = argmax->data() + plane * out_plane;
            for (size_t i = 0; i < out_plane; ++i) gx[arg[i]] += gy[i];
        });
    }));
}

Var global_avg_pool(const Var& x) {
    const auto& nx = node_of(x, "global_avg_pool");
    if (nx->value.rank() != 4) throw data_error("global_avg_pool: expects x[N,C,H,W]");
    const int n = nx->value.shape[0], c = nx->value.shape[1];
    const size_t hw = static_cast<size_t>(nx->value.shape[2]) * nx->value.shape[3];
    const double inv = 1.0 / static_cast<double>(hw);
    Array out = Array::zeros({n, c});
    for (size_t plane = 0; plane < static_cast<size_t>(n) * c; ++plane) {
        const double* src = nx->value.data.data() + plane * hw;
        double s = 0.0;
        for (size_t i = 0; i < hw; ++i) s += src[i];
        out.data[plane] = s * inv;
    }
    return Var(make_node("global_avg_pool", std::move(out), {nx}, [n, c, hw, inv](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        for (size_t plane = 0; plane < static_cast<size_t>(n) * c; ++plane) {
            const double g = self.grad.data[plane] * inv;
            double* gx = p.grad.data.data() + plane * hw;
            for (size_t i = 0; i < hw; ++i) gx[i] += g;
        }
    }));
}

} // namespace densiclip::ad
