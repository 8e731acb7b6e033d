#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace densiclip {

// Dense row-major array of 64-bit floats. Computation is always done in
// doubles; 32-bit storage only appears in checkpoint files.
struct Array {
    std::vector<int> shape;
    std::vector<double> data;

    Array() = default;
    Array(std::vector<int> shp, std::vector<double> values);

    static Array zeros(std::vector<int> shp);
    static Array full(std::vector<int> shp, double value);
    static Array scalar(double value);

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return data.size() == 1; }
    bool same_shape(const Array& other) const { return shape == other.shape; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // 2-D accessors (row-major)
    double& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    std::string shape_str() const;
};

size_t shape_numel(const std::vector<int>& shape);

// Throws numerical_error when any entry is NaN or infinite.
void check_finite(const Array& a, const char* where);

// Throws data_error on mismatch.
void check_same_shape(const Array& a, const Array& b, const char* where);

} // namespace densiclip
