#pragma once

#include <stdexcept>
#include <string>

namespace densiclip {

// Error taxonomy shared by the library and the CLI. The CLI maps each
// category to a distinct process exit code.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 1;
inline constexpr int data = 2;
inline constexpr int numerical = 3;
inline constexpr int io = 4;
} // namespace exit_code

} // namespace densiclip
