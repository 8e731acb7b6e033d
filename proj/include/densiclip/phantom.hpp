#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densiclip/array.hpp"
#include "densiclip/density.hpp"
#include "densiclip/manifest.hpp"

namespace densiclip {

struct FractionRange {
    double lo = 0.0;
    double hi = 0.0;
};

// Per-class dense-tissue area fractions. Defaults are disjoint and ordered;
// allow_overlap admits overlapping neighbors (midpoints must stay ordered),
// which makes adjacent classes intentionally confusable.
struct ClassFractionProfile {
    std::array<FractionRange, kNumDensityClasses> ranges;
    bool allow_overlap = false;

    static ClassFractionProfile defaults();
    // Neighboring ranges share mass, so adjacent classes overlap on purpose
    // (the deliberately hard variant used to study error structure).
    static ClassFractionProfile overlapping();
    void validate() const; // config_error on violation
};

struct ArtifactFlags {
    bool burned_in_text = false;
    bool paddle_mark = false;
    bool implant = false;
    bool clip = false;

    bool any() const { return burned_in_text || paddle_mark || implant || clip; }
};

struct PhantomSpec {
    Density cls = Density::A;
    int size = 256;          // square raw image, >= 32
    FractionRange fraction;  // dense area target range for this image
    ArtifactFlags artifacts;
    uint64_t seed = 0;
    // 0..3 confines fibroglandular blobs to an image quadrant (row-major
    // order: top-left, top-right, bottom-left, bottom-right); the fraction is
    // then measured against the quadrant's share of the breast. -1 = anywhere.
    int quadrant = -1;
    double intensity_shift = 0.0; // brightens/darkens tissue (domain shift)
    double noise_level = 0.02;    // per-pixel texture amplitude

    void validate() const; // config_error on contradictions
};

struct Phantom {
    Array image;         // {H,W} in [0,1]
    Array breast_mask;   // {H,W} 0/1, the half-ellipse foreground
    Array dense_mask;    // {H,W} 0/1, fibroglandular ground truth
    Array artifact_mask; // {H,W} 0/1, rendered artifact pixels
    double dense_fraction = 0.0; // achieved dense area / reference area
};

// Deterministic per seed: the same spec renders byte-identical images.
Phantom generate_phantom(const PhantomSpec& spec);

// Spec for one image of the given class, drawing its target fraction from
// the profile's class range.
PhantomSpec spec_for_class(const ClassFractionProfile& profile, Density cls, uint64_t seed);

// Whole-dataset generation: renders PNGs under <out_dir>/images (ground
// truth under <out_dir>/masks), synthesizes patients/studies/sites, and
// returns the manifest with image paths relative to out_dir.
struct DatasetSpec {
    std::string name = "phantom";
    int per_class = 250;
    std::vector<Density> classes = {Density::A, Density::B, Density::C, Density::D};
    ClassFractionProfile profile = ClassFractionProfile::defaults();
    int image_size = 256;
    uint64_t seed = 7;
    double longitudinal_fraction = 0.15; // of patients, gets a second study
    double artifact_fraction = 0.25;     // of images, gets one random artifact
    double intensity_shift = 0.0;
    double noise_level = 0.02;
    int quadrant = -1;
    bool write_masks = true;

    void validate() const;
};

Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir);

} // namespace densiclip
