#include "densiclip/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <sstream>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"

namespace densiclip {

namespace {

constexpr const char* kMagic = "densiclip tensor archive v1";

void check_key(const std::string& key) {
    if (key.empty() || key.find('\n') != std::string::npos || key.find('=') != std::string::npos ||
        key.find(' ') != std::string::npos || key.front() == '[')
        throw io_error("tensor archive: invalid key \"" + key + "\"");
}

} // namespace

void TensorArchive::set_config(const std::string& key, const std::string& value) {
    check_key(key);
    if (value.find('\n') != std::string::npos)
        throw io_error("tensor archive: config value for " + key + " contains a newline");
    for (auto& kv : config)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    config.emplace_back(key, value);
}

bool TensorArchive::has_config(const std::string& key) const {
    for (const auto& kv : config)
        if (kv.first == key) return true;
    return false;
}

const std::string& TensorArchive::config_at(const std::string& key) const {
    for (const auto& kv : config)
        if (kv.first == key) return kv.second;
    throw io_error("tensor archive: missing config key " + key);
}

void TensorArchive::add_tensor(const std::string& name, Array value) {
    check_key(name);
    for (const auto& nt : tensors)
        if (nt.first == name) throw io_error("tensor archive: duplicate tensor " + name);
    tensors.emplace_back(name, std::move(value));
}

const Array& TensorArchive::tensor_at(const std::string& name) const {
    for (const auto& nt : tensors)
        if (nt.first == name) return nt.second;
    throw io_error("tensor archive: missing tensor " + name);
}

void TensorArchive::save(const std::string& path) const {
    std::ostringstream out;
    out << kMagic << "\n[config]\n";
    for (const auto& kv : config) out << kv.first << "=" << kv.second << "\n";
    out << "[tensors]\n";
    for (const auto& nt : tensors) {
        out << nt.first << " ";
        for (size_t i = 0; i < nt.second.shape.size(); ++i)
            out << (i ? "x" : "") << nt.second.shape[i];
        out << " f32\n";
    }
    out << "[payload]\n";
    for (const auto& nt : tensors) {
        for (double v : nt.second.data) {
            const auto bits = std::bit_cast<uint32_t>(static_cast<float>(v));
            const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                   static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
            out.write(bytes, 4);
        }
    }
    atomic_write_text(path, out.str());
}

TensorArchive TensorArchive::load(const std::string& path) {
    const std::string content = read_text_file(path);
    size_t pos = 0;
    auto next_line = [&]() {
        const size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) throw io_error(path + ": truncated tensor archive");
        std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };

    if (next_line() != kMagic) throw io_error(path + ": not a tensor archive (bad magic line)");
    if (next_line() != "[config]") throw io_error(path + ": expected [config] section");

    TensorArchive archive;
    std::string line;
    while ((line = next_line()) != "[tensors]") {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw io_error(path + ": malformed config line \"" + line + "\"");
        archive.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }

    struct Header {
        std::string name;
        std::vector<int> shape;
    };
    std::vector<Header> headers;
    while ((line = next_line()) != "[payload]") {
        std::istringstream fields(line);
        std::string name, dims, dtype;
        if (!(fields >> name >> dims >> dtype) || dtype != "f32")
            throw io_error(path + ": malformed tensor header \"" + line + "\"");
        Header h{name, {}};
        std::istringstream dim_in(dims);
        std::string dim;
        while (std::getline(dim_in, dim, 'x')) {
            try {
                h.shape.push_back(std::stoi(dim));
            } catch (const std::exception&) {
                throw io_error(path + ": bad dimension \"" + dim + "\" in tensor " + name);
            }
            if (h.shape.back() <= 0) throw io_error(path + ": non-positive dimension in tensor " + name);
        }
        if (h.shape.empty()) throw io_error(path + ": tensor " + name + " has no dimensions");
        headers.push_back(std::move(h));
    }

    for (const auto& h : headers) {
        size_t n = 1;
        for (int d : h.shape) n *= static_cast<size_t>(d);
        if (pos + n * 4 > content.size()) throw io_error(path + ": payload shorter than tensor headers declare");
        Array value(h.shape, std::vector<double>(n, 0.0));
        for (size_t i = 0; i < n; ++i) {
            const auto* b = reinterpret_cast<const unsigned char*>(content.data() + pos + i * 4);
            const uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                                  (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
            value.data[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
        pos += n * 4;
        archive.add_tensor(h.name, std::move(value));
    }
    if (pos != content.size()) throw io_error(path + ": trailing bytes after declared payload");
    return archive;
}

} // namespace densiclip
