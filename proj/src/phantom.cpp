#include "densiclip/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/parallel.hpp"
#include "densiclip/png_io.hpp"
#include "densiclip/rng.hpp"

namespace densiclip {

namespace {

// Sum of a few random cosine gratings, for smooth large-scale tissue texture.
struct SmoothField {
    struct Wave {
        double kr, kc, phase, amp;
    };
    std::vector<Wave> waves;

    SmoothField(Rng& rng, int size, int count) {
        for (int i = 0; i < count; ++i) {
            const double wavelength = rng.uniform(0.25, 0.9) * size;
            const double angle = rng.uniform(0.0, 2.0 * M_PI);
            const double k = 2.0 * M_PI / wavelength;
            waves.push_back({k * std::sin(angle), k * std::cos(angle), rng.uniform(0.0, 2.0 * M_PI),
                             rng.uniform(0.5, 1.0)});
        }
    }

    // roughly in [-1, 1]
    double operator()(int r, int c) const {
        double v = 0.0, norm = 0.0;
        for (const auto& w : waves) {
            v += w.amp * std::cos(w.kr * r + w.kc * c + w.phase);
            norm += w.amp;
        }
        return norm > 0.0 ? v / norm : 0.0;
    }
};

struct Geometry {
    double cy, ry, rx; // half-ellipse anchored at the left edge

    double radial(int r, int c) const {
        const double a = c / rx;
        const double b = (r - cy) / ry;
        return std::sqrt(a * a + b * b);
    }
    bool inside(int r, int c) const { return radial(r, c) <= 1.0; }
};

bool in_quadrant(int r, int c, int quadrant, int size) {
    if (quadrant < 0) return true;
    const int half = size / 2;
    const bool top = r < half, left = c < half;
    switch (quadrant) {
        case 0: return top && left;
        case 1: return top && !left;
        case 2: return !top && left;
        default: return !top && !left;
    }
}

void paint_blob(Array& image, Array& dense_mask, const Geometry& geo, const SmoothField& texture, int size,
                double cr, double cc, double ar, double ac, double angle, double base, int quadrant,
                int64_t& dense_pixels) {
    const double extent = std::max(ar, ac);
    const int r0 = std::max(0, static_cast<int>(std::floor(cr - extent)));
    const int r1 = std::min(size - 1, static_cast<int>(std::ceil(cr + extent)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cc - extent)));
    const int c1 = std::min(size - 1, static_cast<int>(std::ceil(cc + extent)));
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double dr = r - cr, dc = c - cc;
            const double u = (dr * ca + dc * sa) / ar;
            const double v = (-dr * sa + dc * ca) / ac;
            if (u * u + v * v > 1.0) continue;
            if (!geo.inside(r, c) || !in_quadrant(r, c, quadrant, size)) continue;
            const double value = base + 0.08 * texture(r, c);
            image.at(r, c) = std::max(image.at(r, c), value);
            if (dense_mask.at(r, c) == 0.0) {
                dense_mask.at(r, c) = 1.0;
                ++dense_pixels;
            }
        }
    }
}

void mark_artifact(Array& image, Array& artifact_mask, int r, int c, double value) {
    image.at(r, c) = std::max(image.at(r, c), value);
    artifact_mask.at(r, c) = 1.0;
}

void render_burned_in_text(Array& image, Array& artifact_mask, Rng& rng, int size) {
    // dot-matrix glyph blocks hugging the top-right corner, near-saturated so
    // the annotation-removal heuristic has something to find
    const int cell = std::max(2, size / 96);
    const int glyph_w = 3 * cell;
    const int count = rng.uniform_int(3, 6);
    const int margin = std::max(2, size / 48);
    int c0 = size - margin - count * (glyph_w + cell);
    const int r0 = margin;
    for (int g = 0; g < count; ++g) {
        for (int gr = 0; gr < 5; ++gr)
            for (int gc = 0; gc < 3; ++gc) {
                if (rng.uniform01() > 0.62) continue;
                for (int r = 0; r < cell; ++r)
                    for (int c = 0; c < cell; ++c) {
                        const int rr = r0 + gr * cell + r, cc = c0 + gc * cell + c;
                        if (rr >= 0 && rr < size && cc >= 0 && cc < size)
                            mark_artifact(image, artifact_mask, rr, cc, 0.995);
                    }
            }
        c0 += glyph_w + cell;
    }
}

void render_paddle_mark(Array& image, Array& artifact_mask, Rng& rng, int size) {
    // bright compression-paddle edge crossing the full width near the top;
    // kept below the saturation threshold so preprocessing must tolerate it
    const int thickness = std::max(2, size / 48);
    const int r0 = static_cast<int>(rng.uniform(0.04, 0.10) * size);
    const double value = rng.uniform(0.86, 0.92);
    for (int r = r0; r < std::min(size, r0 + thickness); ++r)
        for (int c = 0; c < size; ++c) mark_artifact(image, artifact_mask, r, c, value);
}

void render_implant(Array& image, Array& artifact_mask, const Geometry& geo, Rng& rng, int size) {
    // smooth bright ellipse against the chest wall
    const double cr = geo.cy + rng.uniform(-0.05, 0.05) * size;
    const double ar = rng.uniform(0.18, 0.26) * size;
    const double ac = rng.uniform(0.22, 0.32) * size;
    const double value = rng.uniform(0.88, 0.93);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double dr = (r - cr) / ar, dc = c / ac;
            if (dr * dr + dc * dc <= 1.0 && geo.inside(r, c)) mark_artifact(image, artifact_mask, r, c, value);
        }
}

void render_clip(Array& image, Array& artifact_mask, const Geometry& geo, Rng& rng, int size) {
    // tiny bright surgical-clip marker inside the breast
    for (int attempt = 0; attempt < 128; ++attempt) {
        const int cr = rng.uniform_int(0, size - 1);
        const int cc = rng.uniform_int(0, size - 1);
        if (geo.radial(cr, cc) > 0.75) continue;
        const int radius = std::max(1, size / 96);
        for (int r = cr - radius; r <= cr + radius; ++r)
            for (int c = cc - radius; c <= cc + radius; ++c)
                if (r >= 0 && r < size && c >= 0 && c < size &&
                    std::abs(r - cr) + std::abs(c - cc) <= radius)
                    mark_artifact(image, artifact_mask, r, c, 0.95);
        return;
    }
}

std::string two_digits(int v) { return (v < 10 ? "0" : "") + std::to_string(v); }

} // namespace

ClassFractionProfile ClassFractionProfile::defaults() {
    ClassFractionProfile p;
    p.ranges = {FractionRange{0.00, 0.10}, FractionRange{0.15, 0.35}, FractionRange{0.40, 0.55},
                FractionRange{0.60, 0.85}};
    return p;
}

ClassFractionProfile ClassFractionProfile::overlapping() {
    // adjacent ranges share a band ~0.08-0.10 wide while classes two steps
    // apart stay disjoint, so confusions concentrate on neighbors
    ClassFractionProfile p;
    p.ranges = {FractionRange{0.00, 0.20}, FractionRange{0.12, 0.40}, FractionRange{0.32, 0.60},
                FractionRange{0.52, 0.85}};
    p.allow_overlap = true;
    return p;
}

void ClassFractionProfile::validate() const {
    for (int c = 0; c < kNumDensityClasses; ++c) {
        const auto& r = ranges[static_cast<size_t>(c)];
        if (r.lo < 0.0 || r.hi > 0.95 || r.lo > r.hi)
            throw config_error(std::string("fraction range for class ") + density_name(static_cast<Density>(c)) +
                               " must satisfy 0 <= lo <= hi <= 0.95");
    }
    for (int c = 1; c < kNumDensityClasses; ++c) {
        const auto& prev = ranges[static_cast<size_t>(c - 1)];
        const auto& cur = ranges[static_cast<size_t>(c)];
        if (prev.lo + prev.hi >= cur.lo + cur.hi)
            throw config_error("class fraction midpoints must increase from A to D");
        if (!allow_overlap && prev.hi > cur.lo)
            throw config_error(std::string("fraction ranges of classes ") + density_name(static_cast<Density>(c - 1)) +
                               " and " + density_name(static_cast<Density>(c)) + " overlap");
    }
}

void PhantomSpec::validate() const {
    if (size < 32) throw config_error("phantom size must be at least 32 pixels");
    if (fraction.lo < 0.0 || fraction.hi > 0.95 || fraction.lo > fraction.hi)
        throw config_error("phantom dense fraction range must satisfy 0 <= lo <= hi <= 0.95");
    if (quadrant < -1 || quadrant > 3) throw config_error("phantom quadrant must be -1 or 0..3");
    if (intensity_shift < -0.15 || intensity_shift > 0.15)
        throw config_error("phantom intensity shift must stay within [-0.15, 0.15]");
    if (noise_level < 0.0 || noise_level > 0.1)
        throw config_error("phantom noise level must stay within [0, 0.1]");
}

PhantomSpec spec_for_class(const ClassFractionProfile& profile, Density cls, uint64_t seed) {
    profile.validate();
    PhantomSpec spec;
    spec.cls = cls;
    spec.fraction = profile.ranges[static_cast<size_t>(cls)];
    spec.seed = seed;
    return spec;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const int size = spec.size;
    Rng rng(spec.seed);

    Phantom out;
    out.image = Array::zeros({size, size});
    out.breast_mask = Array::zeros({size, size});
    out.dense_mask = Array::zeros({size, size});
    out.artifact_mask = Array::zeros({size, size});

    Geometry geo{size * rng.uniform(0.46, 0.54), size * rng.uniform(0.38, 0.45), size * rng.uniform(0.66, 0.80)};
    const SmoothField texture(rng, size, 4);

    // background noise floor and fatty tissue with a soft edge falloff; the
    // fatty level and the falloff floor are kept well above the background so
    // that a bimodal threshold separates background|breast rather than
    // splitting the breast into fatty|dense halves
    const double fatty = 0.46 + spec.intensity_shift;
    int64_t reference_pixels = 0;
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double noise = rng.uniform(-1.0, 1.0) * spec.noise_level;
            if (!geo.inside(r, c)) {
                // air gap: flat and dark, like the unexposed region of a
                // mammogram, so the skin line is the only intensity step
                out.image.at(r, c) = 0.04;
                continue;
            }
            out.breast_mask.at(r, c) = 1.0;
            if (in_quadrant(r, c, spec.quadrant, size)) ++reference_pixels;
            // a steep, shallow falloff keeps the skin-line cliff-like: the
            // histogram then has an empty valley between background and
            // breast, which makes threshold-based cropping stable under
            // re-application (crop -> resize -> crop again finds the same box)
            const double falloff = std::clamp(12.0 * (1.0 - geo.radial(r, c)), 0.85, 1.0);
            out.image.at(r, c) = std::clamp(falloff * (fatty + 0.06 * texture(r, c)) + noise, 0.05, 1.0);
        }
    if (reference_pixels == 0) throw config_error("phantom quadrant does not intersect the breast region");

    // fibroglandular blobs until the target area fraction is reached
    const double target =
        rng.uniform(spec.fraction.lo + 0.25 * (spec.fraction.hi - spec.fraction.lo),
                    spec.fraction.lo + 0.72 * (spec.fraction.hi - spec.fraction.lo));
    const double dense_base = 0.68 + spec.intensity_shift;
    int64_t dense_pixels = 0;
    int misses = 0;
    while (static_cast<double>(dense_pixels) / reference_pixels < target) {
        if (misses > 20000)
            throw config_error("phantom dense fraction " + std::to_string(target) +
                               " unreachable inside the allowed region");
        const double cr = rng.uniform(0.0, size - 1.0);
        const double cc = rng.uniform(0.0, size - 1.0);
        if (!geo.inside(static_cast<int>(cr), static_cast<int>(cc)) ||
            !in_quadrant(static_cast<int>(cr), static_cast<int>(cc), spec.quadrant, size)) {
            ++misses;
            continue;
        }
        const double ar = rng.uniform(size / 40.0, size / 18.0);
        const double ac = rng.uniform(size / 40.0, size / 18.0);
        const double angle = rng.uniform(0.0, M_PI);
        const int64_t before = dense_pixels;
        paint_blob(out.image, out.dense_mask, geo, texture, size, cr, cc, ar, ac, angle,
                   dense_base + rng.uniform(-0.04, 0.06), spec.quadrant, dense_pixels);
        if (dense_pixels == before) ++misses;
    }
    out.dense_fraction = static_cast<double>(dense_pixels) / reference_pixels;

    if (spec.artifacts.burned_in_text) render_burned_in_text(out.image, out.artifact_mask, rng, size);
    if (spec.artifacts.paddle_mark) render_paddle_mark(out.image, out.artifact_mask, rng, size);
    if (spec.artifacts.implant) render_implant(out.image, out.artifact_mask, geo, rng, size);
    if (spec.artifacts.clip) render_clip(out.image, out.artifact_mask, geo, rng, size);

    return out;
}

void DatasetSpec::validate() const {
    if (per_class <= 0) throw config_error("per_class must be positive");
    if (classes.empty()) throw config_error("at least one class required");
    for (size_t i = 1; i < classes.size(); ++i)
        if (classes[i] <= classes[i - 1]) throw config_error("dataset classes must be strictly ascending");
    if (longitudinal_fraction < 0.0 || longitudinal_fraction > 0.8)
        throw config_error("longitudinal_fraction must stay within [0, 0.8]");
    if (artifact_fraction < 0.0 || artifact_fraction > 1.0)
        throw config_error("artifact_fraction must stay within [0, 1]");
    profile.validate();
    PhantomSpec probe;
    probe.size = image_size;
    probe.quadrant = quadrant;
    probe.intensity_shift = intensity_shift;
    probe.noise_level = noise_level;
    probe.validate();
}

Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
    spec.validate();
    ensure_directory(out_dir + "/images");
    if (spec.write_masks) ensure_directory(out_dir + "/masks");

    static const char* kModalityChoices[] = {"s2D", "DM", "DBT"};
    static const char* kSiteChoices[] = {"site_a", "site_b", "site_c"};

    Manifest manifest;
    manifest.dataset_name = spec.name;
    manifest.seed = spec.seed;

    // identities and per-image seeds drawn serially so the later parallel
    // render pass cannot perturb determinism
    std::vector<PhantomSpec> image_specs;
    Rng rng(Rng::mix(spec.seed, 0x1d));
    int patient_counter = 0;
    for (Density cls : spec.classes) {
        int remaining = spec.per_class;
        while (remaining > 0) {
            const std::string patient_id = "P" + std::to_string(++patient_counter + 10000).substr(1);
            const bool longitudinal = remaining >= 2 && rng.uniform01() < spec.longitudinal_fraction;
            const int studies = longitudinal ? 2 : 1;
            const int year = rng.uniform_int(2019, 2023);
            const std::string site = kSiteChoices[rng.below(3)];
            for (int s = 0; s < studies; ++s) {
                ImageRecord rec;
                rec.patient_id = patient_id;
                rec.study_id = patient_id + "_s" + std::to_string(s + 1);
                rec.image_path = "images/" + patient_id + "_s" + std::to_string(s + 1) + ".png";
                rec.modality = kModalityChoices[rng.below(3)];
                rec.density = cls;
                rec.site = site;
                rec.acquired_at = std::to_string(year + s) + "-" + two_digits(rng.uniform_int(1, 12)) + "-" +
                                  two_digits(rng.uniform_int(1, 28));
                manifest.records.push_back(rec);

                PhantomSpec ps = spec_for_class(spec.profile, cls, rng.next_u64());
                ps.size = spec.image_size;
                ps.quadrant = spec.quadrant;
                ps.intensity_shift = spec.intensity_shift;
                ps.noise_level = spec.noise_level;
                if (rng.uniform01() < spec.artifact_fraction) {
                    switch (rng.below(4)) {
                        case 0: ps.artifacts.burned_in_text = true; break;
                        case 1: ps.artifacts.paddle_mark = true; break;
                        case 2: ps.artifacts.implant = true; break;
                        default: ps.artifacts.clip = true; break;
                    }
                }
                image_specs.push_back(ps);
                --remaining;
            }
        }
    }

    parallel_for(0, image_specs.size(), [&](size_t i) {
        const Phantom phantom = generate_phantom(image_specs[i]);
        const std::string& rel = manifest.records[i].image_path;
        write_png_gray16(phantom.image, out_dir + "/" + rel);
        if (spec.write_masks) {
            const std::string stem = std::filesystem::path(rel).stem().string();
            write_png_gray8(phantom.dense_mask, out_dir + "/masks/" + stem + "_dense.png");
            write_png_gray8(phantom.artifact_mask, out_dir + "/masks/" + stem + "_artifact.png");
        }
    });

    write_manifest(manifest, out_dir + "/manifest.jsonl");
    return manifest;
}

} // namespace densiclip
