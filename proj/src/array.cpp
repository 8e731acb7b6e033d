#include "densiclip/array.hpp"

#include <cmath>
#include <sstream>

#include "densiclip/errors.hpp"

namespace densiclip {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw data_error("array dimension must be positive, got " + std::to_string(d));
        n *= static_cast<size_t>(d);
    }
    return n;
}

Array::Array(std::vector<int> shp, std::vector<double> values) : shape(std::move(shp)), data(std::move(values)) {
    if (shape_numel(shape) != data.size())
        throw data_error("array shape " + shape_str() + " does not match " + std::to_string(data.size()) + " values");
}

Array Array::zeros(std::vector<int> shp) {
    const size_t n = shape_numel(shp);
    Array a;
    a.shape = std::move(shp);
    a.data.assign(n, 0.0);
    return a;
}

Array Array::full(std::vector<int> shp, double value) {
    const size_t n = shape_numel(shp);
    Array a;
    a.shape = std::move(shp);
    a.data.assign(n, value);
    return a;
}

Array Array::scalar(double value) { return Array({1}, {value}); }

std::string Array::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void check_finite(const Array& a, const char* where) {
    // A plain sum turns any NaN/Inf entry into a non-finite total.
    double s = 0.0;
    for (double v : a.data) s += v;
    if (!std::isfinite(s)) {
        for (size_t i = 0; i < a.data.size(); ++i)
            if (!std::isfinite(a.data[i]))
                throw numerical_error(std::string(where) + ": non-finite value at flat index " + std::to_string(i));
        throw numerical_error(std::string(where) + ": non-finite accumulation");
    }
}

void check_same_shape(const Array& a, const Array& b, const char* where) {
    if (!a.same_shape(b))
        throw data_error(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace densiclip
