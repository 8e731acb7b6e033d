#include "doctest.h"

#include <chrono>
#include <filesystem>
#include <string>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/manifest.hpp"

using densiclip::Density;
using densiclip::ImageRecord;
using densiclip::Manifest;

namespace {

std::string scratch_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "densiclip_manifest_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

ImageRecord record(const std::string& patient, const std::string& study, const std::string& path, Density d) {
    ImageRecord r;
    r.patient_id = patient;
    r.study_id = study;
    r.image_path = path;
    r.modality = "DM";
    r.density = d;
    r.site = "site_a";
    r.acquired_at = "2021-06-14";
    return r;
}

Manifest sample_manifest() {
    Manifest m;
    m.dataset_name = "unit";
    m.seed = 11;
    m.records = {
        record("P1", "P1_s1", "images/a.png", Density::A),
        record("P1", "P1_s2", "images/b.png", Density::A),
        record("P2", "P2_s1", "images/c.png", Density::C),
    };
    return m;
}

std::string line_for(const ImageRecord& r) {
    return std::string("{\"patient_id\":\"") + r.patient_id + "\",\"study_id\":\"" + r.study_id +
           "\",\"image_path\":\"" + r.image_path + "\",\"modality\":\"" + r.modality + "\",\"density\":\"" +
           densiclip::density_name(r.density) + "\",\"site\":\"" + r.site + "\",\"acquired_at\":\"" + r.acquired_at +
           "\"}";
}

} // namespace

TEST_CASE("manifest write/load round trip is the identity") {
    const Manifest m = sample_manifest();
    const std::string path = scratch_path("roundtrip.jsonl");
    densiclip::write_manifest(m, path);
    CHECK(densiclip::load_manifest(path) == m);

    Manifest plain = m;
    plain.dataset_name.clear(); // no metadata line
    plain.seed = 0;
    const std::string plain_path = scratch_path("plain.jsonl");
    densiclip::write_manifest(plain, plain_path);
    CHECK(densiclip::load_manifest(plain_path) == plain);
}

TEST_CASE("schema violations report the offending line") {
    const Manifest m = sample_manifest();

    auto expect_error_at = [&](const std::string& name, const std::string& line, const std::string& line_tag) {
        const std::string path = scratch_path(name);
        densiclip::atomic_write_text(path, line_for(m.records[0]) + "\n" + line + "\n");
        try {
            densiclip::load_manifest(path);
            FAIL("expected data_error for ", name);
        } catch (const densiclip::data_error& e) {
            CHECK(std::string(e.what()).find(line_tag) != std::string::npos);
        }
    };

    ImageRecord mri = record("P9", "P9_s1", "images/mri.png", Density::B);
    mri.modality = "MRI";
    expect_error_at("mri.jsonl", line_for(mri), ":2:");

    ImageRecord dupe = m.records[0];
    dupe.patient_id = "P8";
    dupe.study_id = "P8_s1";
    expect_error_at("dupe.jsonl", line_for(dupe), ":2:");

    expect_error_at("junk.jsonl", "not json at all", ":2:");
    expect_error_at("density.jsonl",
                    R"({"patient_id":"P7","study_id":"P7_s1","image_path":"images/x.png","modality":"DM","density":"E","site":"s","acquired_at":"2020-01-01"})",
                    ":2:");
    expect_error_at("unknown_field.jsonl",
                    R"({"patient_id":"P7","study_id":"P7_s1","image_path":"images/x.png","modality":"DM","density":"B","site":"s","acquired_at":"2020-01-01","extra":1})",
                    ":2:");
    expect_error_at("missing_field.jsonl",
                    R"({"patient_id":"P7","study_id":"P7_s1","modality":"DM","density":"B","site":"s","acquired_at":"2020-01-01"})",
                    ":2:");
    expect_error_at("empty_id.jsonl",
                    R"({"patient_id":"","study_id":"P7_s1","image_path":"images/x.png","modality":"DM","density":"B","site":"s","acquired_at":"2020-01-01"})",
                    ":2:");
}

TEST_CASE("missing manifest file raises io_error") {
    CHECK_THROWS_AS(densiclip::load_manifest(scratch_path("absent.jsonl")), densiclip::io_error);
}

TEST_CASE("longitudinal detection counts distinct studies per patient") {
    const Manifest m = sample_manifest();
    const auto studies = densiclip::studies_per_patient(m);
    CHECK(densiclip::is_longitudinal(studies, "P1"));
    CHECK(!densiclip::is_longitudinal(studies, "P2"));
    CHECK(!densiclip::is_longitudinal(studies, "unknown"));

    const auto counts = densiclip::class_counts(m);
    CHECK(counts == std::vector<int64_t>{2, 0, 1, 0});
}

TEST_CASE("a manifest at survey scale loads in under five seconds") {
    Manifest big;
    big.dataset_name = "survey";
    big.seed = 1;
    const int total = 96'995;
    big.records.reserve(total);
    for (int i = 0; i < total; ++i) {
        const std::string patient = "P" + std::to_string(i / 3);
        ImageRecord r = record(patient, patient + "_s" + std::to_string(i % 3 + 1),
                               "images/img_" + std::to_string(i) + ".png",
                               static_cast<Density>(i % densiclip::kNumDensityClasses));
        big.records.push_back(std::move(r));
    }
    const std::string path = scratch_path("survey.jsonl");
    densiclip::write_manifest(big, path);

    const auto start = std::chrono::steady_clock::now();
    const Manifest loaded = densiclip::load_manifest(path);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(loaded.records.size() == static_cast<size_t>(total));
    CHECK(loaded == big);
    CHECK(seconds < 5.0);
}
