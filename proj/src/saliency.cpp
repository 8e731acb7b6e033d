#include "densiclip/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "densiclip/colormap.hpp"
#include "densiclip/errors.hpp"
#include "densiclip/png_io.hpp"
#include "densiclip/preprocess.hpp"

namespace densiclip {

Array gradcam_combine(const Array& activations, const Array& gradients) {
    if (activations.rank() != 3) throw data_error("gradcam_combine: expected {C,s,s}, got " + activations.shape_str());
    check_same_shape(activations, gradients, "gradcam_combine");
    const int channels = activations.shape[0], side = activations.shape[1];
    const size_t plane = static_cast<size_t>(side) * activations.shape[2];
    Array map = Array::zeros({side, activations.shape[2]});
    for (int c = 0; c < channels; ++c) {
        const size_t base = static_cast<size_t>(c) * plane;
        double weight = 0.0;
        for (size_t i = 0; i < plane; ++i) weight += gradients.data[base + i];
        weight /= static_cast<double>(plane);
        for (size_t i = 0; i < plane; ++i) map.data[i] += weight * activations.data[base + i];
    }
    for (double& v : map.data) v = std::max(v, 0.0);
    return map;
}

Array normalize_saliency(const Array& raw, int size) {
    Array grid = bilinear_resize(raw, size, size);
    double peak = 0.0;
    for (double v : grid.data) peak = std::max(peak, v);
    if (peak > 0.0)
        for (double& v : grid.data) v /= peak;
    return grid;
}

SaliencyMap gradcam(const DualEncoderModel& model, const Array& image, int target_class,
                    const ClassPromptSet& prompts, const std::string& source_path) {
    prompts.validate();
    int prompt_row = -1;
    for (int i = 0; i < prompts.size(); ++i)
        if (static_cast<int>(prompts.classes[static_cast<size_t>(i)]) == target_class) prompt_row = i;
    if (prompt_row < 0)
        throw data_error("gradcam: class index " + std::to_string(target_class) + " is not in the prompt set");

    const int input_size = model.vision_config().input_size;
    const Array batch = DualEncoderModel::stack_images({&image}, input_size);

    ad::Var saliency;
    const ad::Var image_embedding = model.encode_images(batch, &saliency);
    const ad::Var prompt_embedding = model.encode_text(prompts.prompts[static_cast<size_t>(prompt_row)]);
    ad::Var score = ad::scalar_mul(ad::cosine_similarity(image_embedding, prompt_embedding),
                                   ad::exp(model.log_temperature()));
    ad::backward(score);

    // drop the leading batch axis of the retained {1,C,s,s} activations
    Array acts = saliency.value();
    Array grads = saliency.grad();
    const std::vector<int> shape = {acts.shape[1], acts.shape[2], acts.shape[3]};
    acts.shape = shape;
    grads.shape = shape;

    SaliencyMap out;
    out.target_class = target_class;
    out.source_path = source_path;
    out.raw = gradcam_combine(acts, grads);
    out.grid = normalize_saliency(out.raw, input_size);
    return out;
}

void write_overlay_png(const Array& image, const Array& map, const std::string& path, double alpha) {
    if (image.rank() != 2 || !image.same_shape(map))
        throw data_error("overlay: image " + image.shape_str() + " and map " + map.shape_str() + " must match");
    if (alpha < 0.0 || alpha > 1.0) throw config_error("overlay: alpha must lie in [0,1]");
    const int h = image.shape[0], w = image.shape[1];
    std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double gray = std::clamp(image.at(r, c), 0.0, 1.0);
            const auto heat = jet_color(std::clamp(map.at(r, c), 0.0, 1.0));
            const size_t at = (static_cast<size_t>(r) * w + c) * 3;
            for (int ch = 0; ch < 3; ++ch)
                rgb[at + static_cast<size_t>(ch)] = static_cast<uint8_t>(
                    std::lround(255.0 * (1.0 - alpha) * gray + alpha * heat[static_cast<size_t>(ch)]));
        }
    write_png_rgb8(rgb, h, w, path);
}

double saliency_mass_fraction(const Array& map, const Array& mask) {
    check_same_shape(map, mask, "saliency_mass_fraction");
    double total = 0.0, inside = 0.0;
    for (size_t i = 0; i < map.numel(); ++i) {
        total += map.data[i];
        if (mask.data[i] > 0.5) inside += map.data[i];
    }
    return total > 0.0 ? inside / total : 0.0;
}

std::pair<double, double> saliency_centroid(const Array& map) {
    const int h = map.shape[0], w = map.shape[1];
    double total = 0.0, row_sum = 0.0, col_sum = 0.0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double v = map.at(r, c);
            total += v;
            row_sum += v * r;
            col_sum += v * c;
        }
    if (total <= 0.0) return {0.5 * (h - 1), 0.5 * (w - 1)};
    return {row_sum / total, col_sum / total};
}

} // namespace densiclip
