#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densiclip/array.hpp"

namespace densiclip {

// Grayscale PNG (8- or 16-bit) -> {H,W} array scaled to [0,1].
Array read_png_gray(const std::string& path);

// {H,W} array, values clamped to [0,1], quantized to the given bit depth.
// Files are written atomically (temp file + rename).
void write_png_gray8(const Array& image, const std::string& path);
void write_png_gray16(const Array& image, const std::string& path);

// Interleaved 8-bit RGB rows, size height*width*3.
void write_png_rgb8(const std::vector<uint8_t>& rgb, int height, int width, const std::string& path);

struct RgbImage {
    std::vector<uint8_t> rgb; // interleaved rows, height*width*3
    int height = 0;
    int width = 0;
};
RgbImage read_png_rgb8(const std::string& path);

} // namespace densiclip
