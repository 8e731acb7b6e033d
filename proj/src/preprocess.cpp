#include "densiclip/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "densiclip/errors.hpp"

namespace densiclip {

namespace {

struct Components {
    std::vector<int> label; // -1 where the predicate is false
    std::vector<int64_t> sizes;
};

// 8-connected labeling of pixels satisfying pred, in row-major scan order.
template <typename Pred>
Components label_components(int h, int w, Pred pred) {
    Components comps;
    comps.label.assign(static_cast<size_t>(h) * w, -1);
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (comps.label[static_cast<size_t>(start)] != -1 || !pred(start / w, start % w)) continue;
        const int id = static_cast<int>(comps.sizes.size());
        comps.sizes.push_back(0);
        stack.push_back(start);
        comps.label[static_cast<size_t>(start)] = id;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            ++comps.sizes[static_cast<size_t>(id)];
            const int r = cur / w, c = cur % w;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    const int idx = rr * w + cc;
                    if (comps.label[static_cast<size_t>(idx)] == -1 && pred(rr, cc)) {
                        comps.label[static_cast<size_t>(idx)] = id;
                        stack.push_back(idx);
                    }
                }
        }
    }
    return comps;
}

int largest_component(const Components& comps) {
    int best = -1;
    int64_t best_size = 0;
    for (size_t i = 0; i < comps.sizes.size(); ++i)
        if (comps.sizes[i] > best_size) {
            best_size = comps.sizes[i];
            best = static_cast<int>(i);
        }
    return best;
}

void min_max(const Array& a, double& lo, double& hi) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (double v : a.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
}

} // namespace

double otsu_threshold(const Array& image) {
    double lo, hi;
    min_max(image, lo, hi);
    if (!(hi > lo)) throw data_error("otsu_threshold: constant image has no foreground/background split");
    constexpr int kBins = 256;
    std::vector<int64_t> hist(kBins, 0);
    const double scale = (kBins - 1) / (hi - lo);
    for (double v : image.data) ++hist[static_cast<size_t>(std::clamp((v - lo) * scale, 0.0, kBins - 1.0))];

    const auto total = static_cast<double>(image.numel());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += b * static_cast<double>(hist[static_cast<size_t>(b)]);

    double best_sigma = -1.0;
    int best_bin = 0;
    double w0 = 0.0, sum0 = 0.0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += static_cast<double>(hist[static_cast<size_t>(b)]);
        sum0 += b * static_cast<double>(hist[static_cast<size_t>(b)]);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
        const double sigma = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (sigma > best_sigma) {
            best_sigma = sigma;
            best_bin = b;
        }
    }
    return lo + (best_bin + 0.5) / scale;
}

Array bilinear_resize(const Array& src, int out_h, int out_w) {
    if (src.rank() != 2) throw data_error("bilinear_resize: expects a {H,W} array, got " + src.shape_str());
    const int h = src.shape[0], w = src.shape[1];
    if (h < 2 || w < 2 || out_h < 2 || out_w < 2)
        throw data_error("bilinear_resize: all dimensions must be at least 2");
    Array out = Array::zeros({out_h, out_w});
    const double row_step = static_cast<double>(h - 1) / (out_h - 1);
    const double col_step = static_cast<double>(w - 1) / (out_w - 1);
    for (int r = 0; r < out_h; ++r) {
        const double y = r * row_step;
        const int y0 = std::min(static_cast<int>(y), h - 2);
        const double fy = y - y0;
        for (int c = 0; c < out_w; ++c) {
            const double x = c * col_step;
            const int x0 = std::min(static_cast<int>(x), w - 2);
            const double fx = x - x0;
            const double v00 = src.at(y0, x0), v01 = src.at(y0, x0 + 1);
            const double v10 = src.at(y0 + 1, x0), v11 = src.at(y0 + 1, x0 + 1);
            out.at(r, c) = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
    }
    return out;
}

PreprocessResult preprocess_image(const Array& raw, int out_size) {
    if (raw.rank() != 2) throw data_error("preprocess: expects a {H,W} array, got " + raw.shape_str());
    const int h = raw.shape[0], w = raw.shape[1];
    if (h < 32 || w < 32) throw data_error("preprocess: image must be at least 32x32, got " + raw.shape_str());
    check_finite(raw, "preprocess");
    if (out_size < 2) throw config_error("preprocess: output size must be at least 2");

    double lo, hi;
    min_max(raw, lo, hi);
    if (!(hi > lo)) throw data_error("preprocess: no foreground (constant image)");

    const double fg_threshold = otsu_threshold(raw);
    Array image = raw;
    const auto foreground = [&](int r, int c) { return image.at(r, c) > fg_threshold; };
    const Components fg = label_components(h, w, foreground);
    const int breast = largest_component(fg);
    if (breast < 0) throw data_error("preprocess: no foreground component found");

    // annotation removal: small near-saturated components outside the breast
    const double sat_threshold = lo + 0.98 * (hi - lo);
    const Components sat = label_components(h, w, [&](int r, int c) { return image.at(r, c) >= sat_threshold; });
    const auto size_limit = static_cast<int64_t>(0.02 * static_cast<double>(image.numel()));
    std::vector<bool> keep(sat.sizes.size(), false);
    for (size_t i = 0; i < image.numel(); ++i)
        if (sat.label[i] != -1 && fg.label[i] == breast) keep[static_cast<size_t>(sat.label[i])] = true;
    for (size_t i = 0; i < image.numel(); ++i) {
        const int id = sat.label[i];
        if (id != -1 && !keep[static_cast<size_t>(id)] && sat.sizes[static_cast<size_t>(id)] < size_limit)
            image.data[i] = 0.0;
    }

    // crop to the breast's bounding box
    CropBox box{h, w, 0, 0};
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (fg.label[static_cast<size_t>(r) * w + c] == breast) {
                box.r0 = std::min(box.r0, r);
                box.c0 = std::min(box.c0, c);
                box.r1 = std::max(box.r1, r + 1);
                box.c1 = std::max(box.c1, c + 1);
            }
    if (box.height() < 2 || box.width() < 2)
        throw data_error("preprocess: degenerate foreground bounding box (" + std::to_string(box.height()) + "x" +
                         std::to_string(box.width()) + ")");
    Array cropped = Array::zeros({box.height(), box.width()});
    for (int r = 0; r < box.height(); ++r)
        for (int c = 0; c < box.width(); ++c) cropped.at(r, c) = image.at(box.r0 + r, box.c0 + c);

    Array resized = bilinear_resize(cropped, out_size, out_size);

    double rlo, rhi;
    min_max(resized, rlo, rhi);
    if (!(rhi > rlo)) throw data_error("preprocess: cropped image has no contrast");
    for (double& v : resized.data) v = (v - rlo) / (rhi - rlo);

    return PreprocessResult{std::move(resized), box};
}

Array transform_mask(const Array& mask, const CropBox& crop, int out_size) {
    if (mask.rank() != 2) throw data_error("transform_mask: expects a {H,W} array, got " + mask.shape_str());
    if (crop.r0 < 0 || crop.c0 < 0 || crop.r1 > mask.shape[0] || crop.c1 > mask.shape[1] || crop.height() < 2 ||
        crop.width() < 2)
        throw data_error("transform_mask: crop box does not fit the mask");
    Array cropped = Array::zeros({crop.height(), crop.width()});
    for (int r = 0; r < crop.height(); ++r)
        for (int c = 0; c < crop.width(); ++c) cropped.at(r, c) = mask.at(crop.r0 + r, crop.c0 + c);
    Array resized = bilinear_resize(cropped, out_size, out_size);
    for (double& v : resized.data) v = v > 0.5 ? 1.0 : 0.0;
    return resized;
}

} // namespace densiclip
