#include "doctest.h"

#include <set>
#include <string>
#include <vector>

#include "densiclip/density.hpp"
#include "densiclip/errors.hpp"

using densiclip::Density;

TEST_CASE("density names and parsing round-trip, unknown letters rejected") {
    for (int c = 0; c < densiclip::kNumDensityClasses; ++c) {
        const auto d = static_cast<Density>(c);
        CHECK(densiclip::density_from_string(densiclip::density_name(d)) == d);
    }
    CHECK_THROWS_AS(densiclip::density_from_string("E"), densiclip::data_error);
    CHECK_THROWS_AS(densiclip::density_from_string(""), densiclip::data_error);
    CHECK_THROWS_AS(densiclip::density_from_string("AB"), densiclip::data_error);
}

TEST_CASE("each class maps to its exact report description") {
    CHECK(densiclip::density_prompt(Density::A) == "fatty or almost entirely fatty breasts");
    CHECK(densiclip::density_prompt(Density::B) == "scattered areas of fibroglandular density");
    CHECK(densiclip::density_prompt(Density::C) == "heterogeneously dense breasts");
    CHECK(densiclip::density_prompt(Density::D) == "extremely dense breasts");
}

TEST_CASE("tokenizer lowercases, strips punctuation, and splits on whitespace") {
    CHECK(densiclip::tokenize("Extremely DENSE breasts.") ==
          std::vector<std::string>{"extremely", "dense", "breasts"});
    CHECK(densiclip::tokenize("  scattered,\tareas;  of...\nfibroglandular density! ") ==
          std::vector<std::string>{"scattered", "areas", "of", "fibroglandular", "density"});
    CHECK(densiclip::tokenize("...!?").empty());
    CHECK(densiclip::tokenize("").empty());
}

TEST_CASE("vocabulary keeps first-appearance order without duplicates") {
    const auto vocab = densiclip::build_vocabulary({"b a", "a c b", "c d"});
    CHECK(vocab == std::vector<std::string>{"b", "a", "c", "d"});
}

TEST_CASE("prompt vocabulary covers all four prompts with 13 unique tokens") {
    const auto vocab = densiclip::prompt_vocabulary();
    CHECK(vocab.size() == 13);
    CHECK(std::set<std::string>(vocab.begin(), vocab.end()).size() == vocab.size());
    for (int c = 0; c < densiclip::kNumDensityClasses; ++c)
        for (const auto& token : densiclip::tokenize(densiclip::density_prompt(static_cast<Density>(c))))
            CHECK(std::find(vocab.begin(), vocab.end(), token) != vocab.end());
    // class order means the first prompt's tokens lead
    CHECK(vocab.front() == "fatty");
    CHECK(vocab.back() == "extremely");
}
