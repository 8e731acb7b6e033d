#include "densiclip/colormap.hpp"

#include <algorithm>
#include <cmath>

namespace densiclip {

namespace {

uint8_t channel(double v) { return static_cast<uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

} // namespace

std::array<uint8_t, 3> jet_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const double r = 1.5 - std::abs(4.0 * v - 3.0);
    const double g = 1.5 - std::abs(4.0 * v - 2.0);
    const double b = 1.5 - std::abs(4.0 * v - 1.0);
    return {channel(r), channel(g), channel(b)};
}

} // namespace densiclip
