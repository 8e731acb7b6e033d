#pragma once

#include <string>

#include "densiclip/array.hpp"
#include "densiclip/encoder.hpp"
#include "densiclip/loss.hpp"

namespace densiclip {

struct SaliencyMap {
    Array grid;        // input-resolution attention map, values in [0,1]
    Array raw;         // pre-upsample rectified map on the saliency layer grid
    int target_class = 0;
    std::string source_path;
};

// Channel-weighted activation sum: weight_c = spatial mean of gradients for
// channel c, map = relu(sum_c weight_c * activation_c). Inputs are {C,s,s}.
Array gradcam_combine(const Array& activations, const Array& gradients);

// Bilinear upsample to size x size, then divide by the maximum; an
// identically zero map stays zero.
Array normalize_saliency(const Array& raw, int size);

// GradCAM over the vision tower's final activation map, targeting the
// temperature-scaled cosine similarity between the image embedding and the
// requested class prompt: gradcam_combine on the score's gradients followed
// by normalize_saliency to input resolution.
SaliencyMap gradcam(const DualEncoderModel& model, const Array& image, int target_class,
                    const ClassPromptSet& prompts, const std::string& source_path = {});

// Alpha-blended warm-colormap overlay written as an RGB PNG.
void write_overlay_png(const Array& image, const Array& map, const std::string& path, double alpha = 0.4);

// Share of total map mass inside the mask: sum(map * mask) / sum(map).
// Zero total mass yields 0.
double saliency_mass_fraction(const Array& map, const Array& mask);

// Mass-weighted centroid (row, col) of a map; zero mass yields the center.
std::pair<double, double> saliency_centroid(const Array& map);

} // namespace densiclip
