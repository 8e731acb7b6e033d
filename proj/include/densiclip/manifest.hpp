#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "densiclip/density.hpp"

namespace densiclip {

// One image row of the dataset manifest.
struct ImageRecord {
    std::string patient_id;
    std::string study_id;
    std::string image_path;
    std::string modality; // s2D | DM | DBT
    Density density = Density::A;
    std::string site;
    std::string acquired_at; // ISO-8601 date

    bool operator==(const ImageRecord&) const = default;
};

struct Manifest {
    std::string dataset_name;
    uint64_t seed = 0;
    std::vector<ImageRecord> records;

    bool operator==(const Manifest&) const = default;
};

// JSON-lines serialization: an optional leading metadata line
// {"dataset_name":..., "seed":...} followed by one record object per line
// with exactly the ImageRecord field names. Load errors cite 1-based line
// numbers; duplicate image paths, unknown fields, and enum violations are
// rejected.
Manifest load_manifest(const std::string& path);
void write_manifest(const Manifest& manifest, const std::string& path);

// patient_id -> set of study_ids. A patient is longitudinal when they have
// more than one distinct study.
std::unordered_map<std::string, std::unordered_set<std::string>> studies_per_patient(const Manifest& manifest);
bool is_longitudinal(const std::unordered_map<std::string, std::unordered_set<std::string>>& studies,
                     const std::string& patient_id);

// Per-class record counts, indexed by class.
std::vector<int64_t> class_counts(const Manifest& manifest);

} // namespace densiclip
