#include "densiclip/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"

namespace densiclip {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void png_failure(png_structp, png_const_charp msg) {
    throw io_error(std::string("libpng: ") + msg);
}

void png_warning_sink(png_structp, png_const_charp) {}

uint16_t quantize(double v, int levels) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<uint16_t>(std::lround(v * levels));
}

void write_gray(const Array& image, const std::string& path, int bit_depth) {
    if (image.rank() != 2)
        throw data_error("write_png_gray: expects a {H,W} array, got " + image.shape_str());
    const int h = image.shape[0], w = image.shape[1];
    const std::string tmp = path + ".tmp";
    {
        FilePtr file(std::fopen(tmp.c_str(), "wb"));
        if (!file) throw io_error("cannot open " + tmp + " for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_failure, png_warning_sink);
        if (!png) throw io_error("png_create_write_struct failed");
        png_infop info = png_create_info_struct(png);
        try {
            png_init_io(png, file.get());
            png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                         PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
            png_write_info(png, info);
            const int levels = bit_depth == 8 ? 255 : 65535;
            std::vector<uint8_t> row(static_cast<size_t>(w) * (bit_depth / 8));
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    const uint16_t q = quantize(image.at(r, c), levels);
                    if (bit_depth == 8) {
                        row[static_cast<size_t>(c)] = static_cast<uint8_t>(q);
                    } else {
                        row[static_cast<size_t>(c) * 2] = static_cast<uint8_t>(q >> 8);
                        row[static_cast<size_t>(c) * 2 + 1] = static_cast<uint8_t>(q & 0xff);
                    }
                }
                png_write_row(png, row.data());
            }
            png_write_end(png, info);
        } catch (...) {
            png_destroy_write_struct(&png, &info);
            std::remove(tmp.c_str());
            throw;
        }
        png_destroy_write_struct(&png, &info);
    }
    rename_over(tmp, path);
}

} // namespace

Array read_png_gray(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw io_error("cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw io_error(path + " is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_failure, png_warning_sink);
    if (!png) throw io_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, file.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        if (color != PNG_COLOR_TYPE_GRAY)
            throw data_error(path + ": expected grayscale PNG, got color type " + std::to_string(color));
        int depth = png_get_bit_depth(png, info);
        if (depth < 8) {
            png_set_expand_gray_1_2_4_to_8(png);
            depth = 8;
        }
        png_read_update_info(png, info);
        const int h = static_cast<int>(png_get_image_height(png, info));
        const int w = static_cast<int>(png_get_image_width(png, info));
        Array out = Array::zeros({h, w});
        std::vector<uint8_t> row(static_cast<size_t>(w) * (depth / 8));
        const double scale = depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
        for (int r = 0; r < h; ++r) {
            png_read_row(png, row.data(), nullptr);
            for (int c = 0; c < w; ++c) {
                const uint16_t q = depth == 8 ? row[static_cast<size_t>(c)]
                                              : static_cast<uint16_t>((row[static_cast<size_t>(c) * 2] << 8) |
                                                                      row[static_cast<size_t>(c) * 2 + 1]);
                out.data[static_cast<size_t>(r) * w + c] = q * scale;
            }
        }
        png_read_end(png, nullptr);
        png_destroy_read_struct(&png, &info, nullptr);
        return out;
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

void write_png_gray8(const Array& image, const std::string& path) { write_gray(image, path, 8); }
void write_png_gray16(const Array& image, const std::string& path) { write_gray(image, path, 16); }

void write_png_rgb8(const std::vector<uint8_t>& rgb, int height, int width, const std::string& path) {
    if (height <= 0 || width <= 0 || rgb.size() != static_cast<size_t>(height) * width * 3)
        throw data_error("write_png_rgb8: buffer size does not match " + std::to_string(height) + "x" +
                         std::to_string(width) + " RGB");
    const std::string tmp = path + ".tmp";
    {
        FilePtr file(std::fopen(tmp.c_str(), "wb"));
        if (!file) throw io_error("cannot open " + tmp + " for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_failure, png_warning_sink);
        if (!png) throw io_error("png_create_write_struct failed");
        png_infop info = png_create_info_struct(png);
        try {
            png_init_io(png, file.get());
            png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                         PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
            png_write_info(png, info);
            for (int r = 0; r < height; ++r)
                png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<size_t>(r) * width * 3));
            png_write_end(png, info);
        } catch (...) {
            png_destroy_write_struct(&png, &info);
            std::remove(tmp.c_str());
            throw;
        }
        png_destroy_write_struct(&png, &info);
    }
    rename_over(tmp, path);
}

RgbImage read_png_rgb8(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw io_error("cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw io_error(path + " is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_failure, png_warning_sink);
    if (!png) throw io_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, file.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8)
            throw data_error(path + ": expected 8-bit RGB PNG");
        png_read_update_info(png, info);
        RgbImage out;
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.rgb.resize(static_cast<size_t>(out.height) * out.width * 3);
        for (int r = 0; r < out.height; ++r)
            png_read_row(png, out.rgb.data() + static_cast<size_t>(r) * out.width * 3, nullptr);
        png_read_end(png, nullptr);
        png_destroy_read_struct(&png, &info, nullptr);
        return out;
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

} // namespace densiclip
