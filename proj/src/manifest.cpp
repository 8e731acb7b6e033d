#include "densiclip/manifest.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"

namespace densiclip {

namespace {

using nlohmann::json;

const std::unordered_set<std::string> kModalities = {"s2D", "DM", "DBT"};
const std::unordered_set<std::string> kRecordFields = {"patient_id", "study_id",   "image_path", "modality",
                                                       "density",    "site",       "acquired_at"};

[[noreturn]] void line_error(const std::string& path, size_t line_no, const std::string& what) {
    throw data_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::string required_string(const json& obj, const char* field, const std::string& path, size_t line_no) {
    const auto it = obj.find(field);
    if (it == obj.end() || !it->is_string())
        line_error(path, line_no, std::string("missing or non-string field \"") + field + "\"");
    const auto value = it->get<std::string>();
    if (value.empty()) line_error(path, line_no, std::string("empty field \"") + field + "\"");
    return value;
}

} // namespace

Manifest load_manifest(const std::string& path) {
    const std::string content = read_text_file(path);
    std::istringstream in(content);
    Manifest manifest;
    std::unordered_set<std::string> seen_paths;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object()) line_error(path, line_no, "expected a JSON object");

        if (line_no == 1 && obj.contains("dataset_name")) {
            for (const auto& item : obj.items())
                if (item.key() != "dataset_name" && item.key() != "seed")
                    line_error(path, line_no, "unknown metadata field \"" + item.key() + "\"");
            manifest.dataset_name = obj.at("dataset_name").get<std::string>();
            if (obj.contains("seed")) manifest.seed = obj.at("seed").get<uint64_t>();
            continue;
        }

        for (const auto& item : obj.items())
            if (!kRecordFields.count(item.key())) line_error(path, line_no, "unknown field \"" + item.key() + "\"");

        ImageRecord rec;
        rec.patient_id = required_string(obj, "patient_id", path, line_no);
        rec.study_id = required_string(obj, "study_id", path, line_no);
        rec.image_path = required_string(obj, "image_path", path, line_no);
        rec.modality = required_string(obj, "modality", path, line_no);
        if (!kModalities.count(rec.modality))
            line_error(path, line_no, "unknown modality \"" + rec.modality + "\" (expected s2D, DM, or DBT)");
        const std::string density = required_string(obj, "density", path, line_no);
        try {
            rec.density = density_from_string(density);
        } catch (const data_error&) {
            line_error(path, line_no, "unknown density \"" + density + "\" (expected A, B, C, or D)");
        }
        rec.site = required_string(obj, "site", path, line_no);
        rec.acquired_at = required_string(obj, "acquired_at", path, line_no);
        if (!seen_paths.insert(rec.image_path).second)
            line_error(path, line_no, "duplicate image_path \"" + rec.image_path + "\"");
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    std::ostringstream out;
    if (!manifest.dataset_name.empty()) {
        json meta;
        meta["dataset_name"] = manifest.dataset_name;
        meta["seed"] = manifest.seed;
        out << meta.dump() << "\n";
    }
    for (const auto& rec : manifest.records) {
        json obj;
        obj["patient_id"] = rec.patient_id;
        obj["study_id"] = rec.study_id;
        obj["image_path"] = rec.image_path;
        obj["modality"] = rec.modality;
        obj["density"] = density_name(rec.density);
        obj["site"] = rec.site;
        obj["acquired_at"] = rec.acquired_at;
        out << obj.dump() << "\n";
    }
    atomic_write_text(path, out.str());
}

std::unordered_map<std::string, std::unordered_set<std::string>> studies_per_patient(const Manifest& manifest) {
    std::unordered_map<std::string, std::unordered_set<std::string>> studies;
    for (const auto& rec : manifest.records) studies[rec.patient_id].insert(rec.study_id);
    return studies;
}

bool is_longitudinal(const std::unordered_map<std::string, std::unordered_set<std::string>>& studies,
                     const std::string& patient_id) {
    const auto it = studies.find(patient_id);
    return it != studies.end() && it->second.size() > 1;
}

std::vector<int64_t> class_counts(const Manifest& manifest) {
    std::vector<int64_t> counts(kNumDensityClasses, 0);
    for (const auto& rec : manifest.records) ++counts[static_cast<size_t>(rec.density)];
    return counts;
}

} // namespace densiclip
