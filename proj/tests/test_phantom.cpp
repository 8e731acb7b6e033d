#include "doctest.h"

#include <filesystem>
#include <string>
#include <vector>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/manifest.hpp"
#include "densiclip/phantom.hpp"
#include "densiclip/png_io.hpp"

using densiclip::Array;
using densiclip::ClassFractionProfile;
using densiclip::Density;
using densiclip::Phantom;
using densiclip::PhantomSpec;

namespace {

std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "densiclip_phantom_tests" / name;
    std::filesystem::create_directories(dir);
    return dir.string();
}

// independent recount: dense pixels / breast pixels, optionally confined to
// an image quadrant
double measured_fraction(const Phantom& p, int quadrant) {
    const int size = p.image.shape[0];
    const int half = size / 2;
    int64_t dense = 0, reference = 0;
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            if (p.breast_mask.at(r, c) < 0.5) continue;
            if (quadrant >= 0) {
                const int q = (r >= half ? 2 : 0) + (c >= half ? 1 : 0);
                if (q != quadrant) continue;
            }
            ++reference;
            if (p.dense_mask.at(r, c) > 0.5) ++dense;
        }
    REQUIRE(reference > 0);
    return static_cast<double>(dense) / static_cast<double>(reference);
}

} // namespace

TEST_CASE("class A and D phantoms hit their configured density ranges") {
    const auto profile = ClassFractionProfile::defaults();

    const Phantom a = generate_phantom(spec_for_class(profile, Density::A, 7));
    const double fa = measured_fraction(a, -1);
    CHECK(fa >= 0.00);
    CHECK(fa <= 0.10);
    CHECK(a.dense_fraction == doctest::Approx(fa).epsilon(1e-12));

    const Phantom d = generate_phantom(spec_for_class(profile, Density::D, 7));
    const double fd = measured_fraction(d, -1);
    CHECK(fd >= 0.60);
    CHECK(fd <= 0.85);
    CHECK(d.dense_fraction == doctest::Approx(fd).epsilon(1e-12));
}

TEST_CASE("identical specs render byte-identical phantoms") {
    const PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::C, 1234);
    const Phantom x = generate_phantom(spec);
    const Phantom y = generate_phantom(spec);
    CHECK(x.image.data == y.image.data);
    CHECK(x.dense_mask.data == y.dense_mask.data);
    CHECK(x.artifact_mask.data == y.artifact_mask.data);

    PhantomSpec other = spec;
    other.seed = 1235;
    CHECK(generate_phantom(other).image.data != x.image.data);
}

TEST_CASE("mean density fractions stay strictly ordered A < B < C < D over 100 seeds") {
    const auto profile = ClassFractionProfile::defaults();
    double means[densiclip::kNumDensityClasses] = {};
    const int trials = 100;
    for (int c = 0; c < densiclip::kNumDensityClasses; ++c) {
        for (int t = 0; t < trials; ++t) {
            PhantomSpec spec = spec_for_class(profile, static_cast<Density>(c), 9000 + t);
            spec.size = 128; // smaller renders keep the sweep fast
            means[c] += generate_phantom(spec).dense_fraction;
        }
        means[c] /= trials;
    }
    CHECK(means[0] < means[1]);
    CHECK(means[1] < means[2]);
    CHECK(means[2] < means[3]);
}

TEST_CASE("dense blobs stay inside the breast and inside a requested quadrant") {
    PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::C, 42);
    spec.quadrant = 1; // top-right
    const Phantom p = generate_phantom(spec);
    const int size = p.image.shape[0];
    const int half = size / 2;
    int64_t dense = 0;
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            if (p.dense_mask.at(r, c) < 0.5) continue;
            ++dense;
            CHECK(p.breast_mask.at(r, c) > 0.5);
            CHECK(r < half);
            CHECK(c >= half);
        }
    CHECK(dense > 0);
    const double f = measured_fraction(p, 1);
    CHECK(f >= 0.40);
    CHECK(f <= 0.55);
}

TEST_CASE("each artifact renders bright marked pixels") {
    for (int which = 0; which < 4; ++which) {
        PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::B, 300 + which);
        switch (which) {
            case 0: spec.artifacts.burned_in_text = true; break;
            case 1: spec.artifacts.paddle_mark = true; break;
            case 2: spec.artifacts.implant = true; break;
            default: spec.artifacts.clip = true; break;
        }
        const Phantom p = generate_phantom(spec);
        int64_t marked = 0;
        double max_marked = 0.0;
        for (size_t i = 0; i < p.artifact_mask.numel(); ++i)
            if (p.artifact_mask.data[i] > 0.5) {
                ++marked;
                max_marked = std::max(max_marked, p.image.data[i]);
            }
        CHECK(marked > 0);
        CHECK(max_marked >= 0.85);

        PhantomSpec clean = spec;
        clean.artifacts = {};
        const Phantom q = generate_phantom(clean);
        int64_t unmarked = 0;
        for (double v : q.artifact_mask.data) unmarked += v > 0.5 ? 1 : 0;
        CHECK(unmarked == 0);
    }
}

TEST_CASE("burned-in text sits near saturation outside the breast body") {
    PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), Density::A, 55);
    spec.artifacts.burned_in_text = true;
    const Phantom p = generate_phantom(spec);
    bool saw_text = false;
    for (size_t i = 0; i < p.artifact_mask.numel(); ++i)
        if (p.artifact_mask.data[i] > 0.5) {
            saw_text = true;
            CHECK(p.image.data[i] >= 0.99);
            CHECK(p.breast_mask.data[i] < 0.5);
        }
    CHECK(saw_text);
}

TEST_CASE("contradictory specs are rejected") {
    PhantomSpec spec;
    spec.size = 16;
    CHECK_THROWS_AS(spec.validate(), densiclip::config_error);
    spec = PhantomSpec{};
    spec.fraction = {0.5, 0.2};
    CHECK_THROWS_AS(generate_phantom(spec), densiclip::config_error);
    spec = PhantomSpec{};
    spec.quadrant = 4;
    CHECK_THROWS_AS(generate_phantom(spec), densiclip::config_error);

    ClassFractionProfile overlapping = ClassFractionProfile::defaults();
    overlapping.ranges[1].hi = overlapping.ranges[2].lo + 0.05;
    CHECK_THROWS_AS(overlapping.validate(), densiclip::config_error);
    overlapping.allow_overlap = true;
    CHECK_NOTHROW(overlapping.validate());

    ClassFractionProfile disordered = ClassFractionProfile::defaults();
    disordered.allow_overlap = true;
    std::swap(disordered.ranges[0], disordered.ranges[3]);
    CHECK_THROWS_AS(disordered.validate(), densiclip::config_error);
}

TEST_CASE("dataset generation writes images, masks, and a loadable manifest") {
    densiclip::DatasetSpec spec;
    spec.name = "tiny";
    spec.per_class = 3;
    spec.image_size = 96;
    spec.seed = 21;
    const std::string dir = scratch_dir("dataset_a");
    const densiclip::Manifest manifest = generate_dataset(spec, dir);

    CHECK(manifest.records.size() == 12);
    CHECK(densiclip::class_counts(manifest) == std::vector<int64_t>{3, 3, 3, 3});
    CHECK(densiclip::load_manifest(dir + "/manifest.jsonl") == manifest);
    for (const auto& rec : manifest.records) {
        const Array image = densiclip::read_png_gray(dir + "/" + rec.image_path);
        CHECK(image.shape == std::vector<int>{96, 96});
        const std::string stem = std::filesystem::path(rec.image_path).stem().string();
        CHECK(std::filesystem::exists(dir + "/masks/" + stem + "_dense.png"));
        CHECK(std::filesystem::exists(dir + "/masks/" + stem + "_artifact.png"));
    }

    // identical spec into a second directory -> byte-identical artifacts
    const std::string dir_b = scratch_dir("dataset_b");
    const densiclip::Manifest again = generate_dataset(spec, dir_b);
    CHECK(again == manifest);
    for (const auto& rec : manifest.records)
        CHECK(densiclip::fnv1a_file(dir + "/" + rec.image_path) == densiclip::fnv1a_file(dir_b + "/" + rec.image_path));
}
