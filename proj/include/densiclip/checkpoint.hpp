#pragma once

#include <string>
#include <utility>
#include <vector>

#include "densiclip/array.hpp"

namespace densiclip {

// Named tensor archive: a plain-text preamble (config key/values and one
// header line per tensor giving name, shape, dtype) followed by raw
// little-endian 32-bit float payloads in header order. Values are quantized
// to f32 on save, so save -> load -> save reproduces identical bytes.
struct TensorArchive {
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, Array>> tensors;

    void set_config(const std::string& key, const std::string& value);
    const std::string& config_at(const std::string& key) const; // io_error when absent
    bool has_config(const std::string& key) const;

    void add_tensor(const std::string& name, Array value); // io_error on duplicate
    const Array& tensor_at(const std::string& name) const; // io_error when absent

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);
};

} // namespace densiclip
