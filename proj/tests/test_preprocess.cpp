#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "densiclip/errors.hpp"
#include "densiclip/phantom.hpp"
#include "densiclip/preprocess.hpp"
#include "densiclip/rng.hpp"

using densiclip::Array;
using densiclip::ClassFractionProfile;
using densiclip::Density;
using densiclip::Phantom;
using densiclip::PhantomSpec;
using densiclip::preprocess_image;

TEST_CASE("output is always 224x224 with min 0 and max 1") {
    for (const uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
        PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::B, seed);
        const auto result = preprocess_image(generate_phantom(spec).image);
        CHECK(result.image.shape == std::vector<int>{224, 224});
        const auto [lo, hi] = std::minmax_element(result.image.data.begin(), result.image.data.end());
        CHECK(*lo == 0.0);
        CHECK(*hi == 1.0);
        CHECK(result.crop.height() > 0);
        CHECK(result.crop.width() > 0);
    }
}

TEST_CASE("preprocessing its own output changes nothing beyond 1e-6") {
    for (const uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::C, seed);
        spec.artifacts.burned_in_text = seed % 2 == 1;
        const Array once = preprocess_image(generate_phantom(spec).image).image;
        const Array twice = preprocess_image(once).image;
        double worst = 0.0;
        for (size_t i = 0; i < once.numel(); ++i) worst = std::max(worst, std::abs(once.data[i] - twice.data[i]));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("burned-in corner text is removed") {
    for (const uint64_t seed : {21ULL, 22ULL, 23ULL, 24ULL, 25ULL}) {
        PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::B, seed);
        spec.artifacts.burned_in_text = true;
        const Phantom p = generate_phantom(spec);

        // the text really is near-saturated before cleaning
        double brightest_text = 0.0;
        for (size_t i = 0; i < p.image.numel(); ++i)
            if (p.artifact_mask.data[i] > 0.5) brightest_text = std::max(brightest_text, p.image.data[i]);
        CHECK(brightest_text > 0.98);

        const auto result = preprocess_image(p.image);
        const Array breast = densiclip::transform_mask(p.breast_mask, result.crop);
        for (size_t i = 0; i < result.image.numel(); ++i)
            if (breast.data[i] < 0.5) CHECK(result.image.data[i] <= 0.98);
    }
}

TEST_CASE("degenerate images are rejected") {
    CHECK_THROWS_AS(preprocess_image(Array::zeros({64, 64})), densiclip::data_error);
    CHECK_THROWS_AS(preprocess_image(Array::full({64, 64}, 0.7)), densiclip::data_error);
    CHECK_THROWS_AS(preprocess_image(Array::zeros({16, 64})), densiclip::data_error);
    Array bad = Array::full({64, 64}, 0.5);
    bad.at(10, 10) = std::nan("");
    CHECK_THROWS_AS(preprocess_image(bad), densiclip::numerical_error);
}

TEST_CASE("crop keeps every ground-truth dense pixel on artifact-free phantoms") {
    for (const uint64_t seed : {31ULL, 32ULL, 33ULL}) {
        PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::D, seed);
        const Phantom p = generate_phantom(spec);
        const auto result = preprocess_image(p.image);
        const int size = p.image.shape[0];
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c)
                if (p.dense_mask.at(r, c) > 0.5) {
                    CHECK(r >= result.crop.r0);
                    CHECK(r < result.crop.r1);
                    CHECK(c >= result.crop.c0);
                    CHECK(c < result.crop.c1);
                }

        // and the transformed mask preserves a comparable dense share
        const Array mask = densiclip::transform_mask(p.dense_mask, result.crop);
        int64_t original = 0, mapped = 0;
        for (double v : p.dense_mask.data) original += v > 0.5 ? 1 : 0;
        for (double v : mask.data) mapped += v > 0.5 ? 1 : 0;
        CHECK(original > 0);
        CHECK(mapped > 0);
    }
}

TEST_CASE("otsu separates a bimodal histogram") {
    Array image = Array::zeros({40, 40});
    for (int r = 0; r < 40; ++r)
        for (int c = 0; c < 40; ++c) image.at(r, c) = (r < 20) ? 0.1 : 0.8;
    const double t = densiclip::otsu_threshold(image);
    CHECK(t > 0.1);
    CHECK(t <= 0.8);
    CHECK_THROWS_AS(densiclip::otsu_threshold(Array::full({8, 8}, 0.3)), densiclip::data_error);
}

TEST_CASE("corner-aligned bilinear resize keeps corners and identity size exact") {
    densiclip::Rng rng(601);
    Array src = Array::zeros({9, 7});
    for (auto& v : src.data) v = rng.uniform01();

    const Array same = densiclip::bilinear_resize(src, 9, 7);
    CHECK(same.data == src.data);

    const Array up = densiclip::bilinear_resize(src, 17, 13);
    CHECK(up.at(0, 0) == doctest::Approx(src.at(0, 0)).epsilon(1e-12));
    CHECK(up.at(0, 12) == doctest::Approx(src.at(0, 6)).epsilon(1e-12));
    CHECK(up.at(16, 0) == doctest::Approx(src.at(8, 0)).epsilon(1e-12));
    CHECK(up.at(16, 12) == doctest::Approx(src.at(8, 6)).epsilon(1e-12));

    CHECK_THROWS_AS(densiclip::bilinear_resize(src, 1, 5), densiclip::data_error);
}

TEST_CASE("paddle marks survive preprocessing without erasing the breast") {
    PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::C, 77);
    spec.artifacts.paddle_mark = true;
    const Phantom p = generate_phantom(spec);
    const auto result = preprocess_image(p.image);
    // the dense tissue is still present in the output
    const Array mask = densiclip::transform_mask(p.dense_mask, result.crop);
    double dense_mean = 0.0, other_mean = 0.0;
    int64_t dense_n = 0, other_n = 0;
    const Array breast = densiclip::transform_mask(p.breast_mask, result.crop);
    for (size_t i = 0; i < mask.numel(); ++i) {
        if (mask.data[i] > 0.5) {
            dense_mean += result.image.data[i];
            ++dense_n;
        } else if (breast.data[i] > 0.5) {
            other_mean += result.image.data[i];
            ++other_n;
        }
    }
    REQUIRE(dense_n > 0);
    REQUIRE(other_n > 0);
    CHECK(dense_mean / dense_n > other_mean / other_n);
}
