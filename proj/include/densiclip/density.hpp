#pragma once

#include <string>
#include <vector>

namespace densiclip {

// BI-RADS breast density categories, ordered from almost entirely fatty (A)
// to extremely dense (D). The integer value doubles as the class index.
enum class Density : int { A = 0, B = 1, C = 2, D = 3 };

inline constexpr int kNumDensityClasses = 4;

// "A".."D"; the inverse throws data_error on anything else.
const char* density_name(Density d);
Density density_from_string(const std::string& s);

// The fixed textual description used as the class prompt.
const std::string& density_prompt(Density d);

// Lowercase, strip punctuation, split on whitespace. Empty tokens dropped.
std::vector<std::string> tokenize(const std::string& text);

// Unique tokens of the given texts in first-appearance order.
std::vector<std::string> build_vocabulary(const std::vector<std::string>& texts);

// Vocabulary covering the four class prompts, in class order.
std::vector<std::string> prompt_vocabulary();

} // namespace densiclip
