#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <string>

#include "densiclip/checkpoint.hpp"
#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/rng.hpp"
#include "support/grad_check.hpp"

using densiclip::Array;
using densiclip::TensorArchive;

namespace {

std::string scratch_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "densiclip_checkpoint_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

TensorArchive sample_archive() {
    densiclip::Rng rng(77);
    TensorArchive a;
    a.set_config("format", "dual-encoder");
    a.set_config("embed_dim", "64");
    a.add_tensor("vision.conv0.weight", gradcheck::random_array({8, 1, 3, 3}, rng, -1.0, 1.0));
    a.add_tensor("vision.conv0.bias", Array::zeros({8}));
    a.add_tensor("log_temperature", Array::scalar(2.302585092994046));
    return a;
}

double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace

TEST_CASE("archive round-trips config, names, shapes, and f32-quantized values") {
    const TensorArchive a = sample_archive();
    const std::string path = scratch_path("roundtrip.ckpt");
    a.save(path);
    const TensorArchive b = TensorArchive::load(path);

    REQUIRE(b.config.size() == a.config.size());
    CHECK(b.config_at("format") == "dual-encoder");
    CHECK(b.config_at("embed_dim") == "64");
    REQUIRE(b.tensors.size() == a.tensors.size());
    for (size_t t = 0; t < a.tensors.size(); ++t) {
        CHECK(b.tensors[t].first == a.tensors[t].first);
        const Array& orig = a.tensors[t].second;
        const Array& loaded = b.tensors[t].second;
        REQUIRE(loaded.shape == orig.shape);
        for (size_t i = 0; i < orig.numel(); ++i) CHECK(loaded.data[i] == f32_round(orig.data[i]));
    }
}

TEST_CASE("save, load, save reproduces identical bytes") {
    const std::string first = scratch_path("bytes_a.ckpt");
    const std::string second = scratch_path("bytes_b.ckpt");
    sample_archive().save(first);
    TensorArchive::load(first).save(second);
    CHECK(densiclip::fnv1a_file(first) == densiclip::fnv1a_file(second));
    CHECK(densiclip::read_text_file(first) == densiclip::read_text_file(second));
}

TEST_CASE("archive lookups report missing and duplicate entries") {
    TensorArchive a = sample_archive();
    CHECK(a.has_config("format"));
    CHECK(!a.has_config("missing"));
    CHECK_THROWS_AS(a.config_at("missing"), densiclip::io_error);
    CHECK_THROWS_AS(a.tensor_at("missing"), densiclip::io_error);
    CHECK_THROWS_AS(a.add_tensor("log_temperature", Array::scalar(0.0)), densiclip::io_error);
    CHECK(a.tensor_at("vision.conv0.bias").numel() == 8);
}

TEST_CASE("keys with separators or newlines are rejected") {
    TensorArchive a;
    CHECK_THROWS_AS(a.set_config("bad key", "v"), densiclip::io_error);
    CHECK_THROWS_AS(a.set_config("bad=key", "v"), densiclip::io_error);
    CHECK_THROWS_AS(a.set_config("bad\nkey", "v"), densiclip::io_error);
    CHECK_THROWS_AS(a.add_tensor("[section]", Array::scalar(1.0)), densiclip::io_error);
}

TEST_CASE("malformed archive files fail loudly") {
    const std::string good = scratch_path("good.ckpt");
    sample_archive().save(good);
    const std::string bytes = densiclip::read_text_file(good);

    auto write_raw = [&](const std::string& name, const std::string& content) {
        const std::string p = scratch_path(name);
        densiclip::atomic_write_text(p, content);
        return p;
    };

    CHECK_THROWS_AS(TensorArchive::load(scratch_path("does_not_exist.ckpt")), densiclip::io_error);
    CHECK_THROWS_AS(TensorArchive::load(write_raw("magic.ckpt", "wrong magic\n" + bytes)), densiclip::io_error);
    CHECK_THROWS_AS(TensorArchive::load(write_raw("truncated.ckpt", bytes.substr(0, bytes.size() - 5))),
                    densiclip::io_error);
    CHECK_THROWS_AS(TensorArchive::load(write_raw("trailing.ckpt", bytes + "extra")), densiclip::io_error);

    // corrupt the tensor header's shape token
    const std::string marker = "8x1x3x3";
    std::string bad_shape = bytes;
    bad_shape.replace(bad_shape.find(marker), marker.size(), "8x1xQx3");
    CHECK_THROWS_AS(TensorArchive::load(write_raw("shape.ckpt", bad_shape)), densiclip::io_error);

    std::string bad_dtype = bytes;
    const std::string dtype_marker = "8x1x3x3 f32";
    bad_dtype.replace(bad_dtype.find(dtype_marker), dtype_marker.size(), "8x1x3x3 f64");
    CHECK_THROWS_AS(TensorArchive::load(write_raw("dtype.ckpt", bad_dtype)), densiclip::io_error);
}

TEST_CASE("empty archive with config only round-trips") {
    TensorArchive a;
    a.set_config("note", "no tensors");
    const std::string path = scratch_path("config_only.ckpt");
    a.save(path);
    const TensorArchive b = TensorArchive::load(path);
    CHECK(b.config_at("note") == "no tensors");
    CHECK(b.tensors.empty());
}
