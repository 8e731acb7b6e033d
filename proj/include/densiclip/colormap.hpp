#pragma once

#include <array>
#include <cstdint>

namespace densiclip {

// Classic blue-to-red "jet" ramp over [0,1], for heatmap rendering.
std::array<uint8_t, 3> jet_color(double v);

} // namespace densiclip
