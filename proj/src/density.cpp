#include "densiclip/density.hpp"

#include <array>
#include <cctype>
#include <unordered_set>

#include "densiclip/errors.hpp"

namespace densiclip {

const char* density_name(Density d) {
    switch (d) {
        case Density::A: return "A";
        case Density::B: return "B";
        case Density::C: return "C";
        case Density::D: return "D";
    }
    throw data_error("density_name: invalid category value " + std::to_string(static_cast<int>(d)));
}

Density density_from_string(const std::string& s) {
    if (s == "A") return Density::A;
    if (s == "B") return Density::B;
    if (s == "C") return Density::C;
    if (s == "D") return Density::D;
    throw data_error("unknown density category \"" + s + "\" (expected A, B, C, or D)");
}

const std::string& density_prompt(Density d) {
    static const std::array<std::string, 4> prompts = {
        "fatty or almost entirely fatty breasts",
        "scattered areas of fibroglandular density",
        "heterogeneously dense breasts",
        "extremely dense breasts",
    };
    const int i = static_cast<int>(d);
    if (i < 0 || i >= kNumDensityClasses)
        throw data_error("density_prompt: invalid category value " + std::to_string(i));
    return prompts[static_cast<size_t>(i)];
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc)) {
            if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        } else if (!std::ispunct(uc)) {
            cur.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

std::vector<std::string> build_vocabulary(const std::vector<std::string>& texts) {
    std::vector<std::string> vocab;
    std::unordered_set<std::string> seen;
    for (const auto& text : texts)
        for (auto& tok : tokenize(text))
            if (seen.insert(tok).second) vocab.push_back(tok);
    return vocab;
}

std::vector<std::string> prompt_vocabulary() {
    std::vector<std::string> prompts;
    for (int c = 0; c < kNumDensityClasses; ++c) prompts.push_back(density_prompt(static_cast<Density>(c)));
    return build_vocabulary(prompts);
}

} // namespace densiclip
