#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "densiclip/array.hpp"
#include "densiclip/density.hpp"
#include "densiclip/encoder.hpp"
#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/manifest.hpp"
#include "densiclip/phantom.hpp"
#include "densiclip/training.hpp"

using densiclip::Array;
using densiclip::ClassFractionProfile;
using densiclip::ClassPromptSet;
using densiclip::Density;
using densiclip::DualEncoderModel;
using densiclip::FoldData;
using densiclip::FoldOutcome;
using densiclip::PhantomSpec;
using densiclip::TrainConfig;
using densiclip::TrainLog;

namespace {

struct Fixture {
    std::vector<Array> images;
    std::vector<int> labels;
    FoldData fold;
};

// 200 images, two classes with opposite intensity shifts on top of the
// fatty-versus-dense contrast: about as linearly separable as phantoms get.
const Fixture& separable_fixture() {
    static const Fixture fixture = [] {
        Fixture f;
        const auto profile = ClassFractionProfile::defaults();
        for (int i = 0; i < 100; ++i) {
            PhantomSpec a = spec_for_class(profile, Density::A, 1000 + i);
            a.size = 64;
            a.intensity_shift = -0.08;
            f.images.push_back(generate_phantom(a).image);
            f.labels.push_back(0);
            PhantomSpec d = spec_for_class(profile, Density::D, 2000 + i);
            d.size = 64;
            d.intensity_shift = 0.08;
            f.images.push_back(generate_phantom(d).image);
            f.labels.push_back(3);
        }
        for (int i = 0; i < 200; ++i) (i % 5 == 4 ? f.fold.val_indices : f.fold.train_indices).push_back(i);
        return f;
    }();
    return fixture;
}

DualEncoderModel small_model(uint64_t seed) {
    densiclip::VisionEncoderConfig vision;
    vision.input_size = 64;
    vision.conv_blocks = {{4, 3, 2}, {8, 3, 2}};
    vision.embed_dim = 16;
    densiclip::TextEncoderConfig text;
    text.vocabulary = densiclip::prompt_vocabulary();
    text.token_embed_dim = 8;
    text.embed_dim = 16;
    return DualEncoderModel(vision, text, seed);
}

TrainConfig fixture_config(const std::string& dir) {
    TrainConfig config;
    config.epochs = 10;
    config.batch_size = 16;
    config.learning_rate = 1e-2;
    config.seed = 11;
    config.checkpoint_dir = dir;
    return config;
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

const std::vector<double> kUniformWeights = {1.0, 1.0, 1.0, 1.0};

} // namespace

TEST_CASE("train loss collapses on the separable fixture within ten epochs") {
    const auto& fx = separable_fixture();
    const auto dir = fresh_dir("densiclip_train_separable");
    DualEncoderModel model = small_model(7);

    const FoldOutcome out = train_fold(model, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(),
                                       kUniformWeights, fixture_config(dir.string()), "fit.ckpt");

    REQUIRE(out.log.epochs.size() == 10);
    for (size_t i = 0; i < out.log.epochs.size(); ++i) CHECK(out.log.epochs[i].epoch == static_cast<int>(i));

    const double first = out.log.epochs.front().train_loss;
    const double final_loss = out.log.epochs.back().train_loss;
    CHECK(final_loss < 0.1 * first);
    // loss already falls across the first epoch boundary
    CHECK(out.log.epochs[1].train_loss < out.log.epochs[0].train_loss);

    REQUIRE(out.log.best_epoch >= 0);
    REQUIRE(out.log.best_epoch < 10);
    CHECK(out.log.best_val_loss ==
          out.log.epochs[static_cast<size_t>(out.log.best_epoch)].val_loss);
    for (const auto& e : out.log.epochs) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(std::isfinite(e.val_loss));
        CHECK(e.val_accuracy >= 0.0);
        CHECK(e.val_accuracy <= 1.0);
    }

    CHECK(out.log.epochs.back().val_accuracy == 1.0);
    CHECK(std::filesystem::exists(out.checkpoint_path));
    CHECK(out.report.sample_count == static_cast<int64_t>(fx.fold.val_indices.size()));
    CHECK(out.report.overall_accuracy >= 0.95);

    // the checkpoint on disk is a loadable dual-encoder archive
    const DualEncoderModel reloaded = DualEncoderModel::load(out.checkpoint_path);
    CHECK(reloaded.vision_config().input_size == 64);
    std::filesystem::remove_all(dir);
}

TEST_CASE("learning rate zero leaves every parameter bit-identical") {
    const auto& fx = separable_fixture();
    for (const auto optimizer : {densiclip::Optimizer::adam, densiclip::Optimizer::sgd}) {
        const auto dir = fresh_dir("densiclip_train_lr0");
        DualEncoderModel model = small_model(3);
        std::vector<std::vector<double>> before;
        for (const auto& [name, var] : model.parameters()) before.push_back(var.value().data);

        TrainConfig config = fixture_config(dir.string());
        config.epochs = 2;
        config.learning_rate = 0.0;
        config.optimizer = optimizer;
        train_fold(model, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(), kUniformWeights, config,
                   "frozen.ckpt");

        for (size_t p = 0; p < model.parameters().size(); ++p)
            CHECK(model.parameters()[p].second.value().data == before[p]);
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("identical config and seed reproduce the log and checkpoint bytes") {
    const auto& fx = separable_fixture();
    const auto dir_a = fresh_dir("densiclip_train_rerun_a");
    const auto dir_b = fresh_dir("densiclip_train_rerun_b");

    TrainConfig config = fixture_config(dir_a.string());
    config.epochs = 3;
    DualEncoderModel first = small_model(19);
    const FoldOutcome out_a = train_fold(first, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(),
                                         kUniformWeights, config, "run.ckpt");

    config.checkpoint_dir = dir_b.string();
    DualEncoderModel second = small_model(19);
    const FoldOutcome out_b = train_fold(second, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(),
                                         kUniformWeights, config, "run.ckpt");

    CHECK(densiclip::logs_equal_ignoring_time(out_a.log, out_b.log));
    CHECK(densiclip::fnv1a_file(out_a.checkpoint_path) == densiclip::fnv1a_file(out_b.checkpoint_path));

    // a different shuffle seed changes the trajectory
    config.seed = 999;
    DualEncoderModel third = small_model(19);
    const FoldOutcome out_c = train_fold(third, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(),
                                         kUniformWeights, config, "run2.ckpt");
    CHECK_FALSE(densiclip::logs_equal_ignoring_time(out_a.log, out_c.log));

    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("exploding updates abort with a numerical diagnostic") {
    const auto& fx = separable_fixture();
    const auto dir = fresh_dir("densiclip_train_nan");
    TrainConfig config = fixture_config(dir.string());
    config.optimizer = densiclip::Optimizer::sgd;
    // large enough that squared conv outputs overflow double range: the
    // towers normalize embeddings, so plain large weights stay finite
    config.learning_rate = 1e200;
    DualEncoderModel model = small_model(5);
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(), kUniformWeights,
                               config, "boom.ckpt"),
                    densiclip::numerical_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("patience stops training after stagnant validation epochs") {
    const auto& fx = separable_fixture();
    const auto dir = fresh_dir("densiclip_train_patience");
    TrainConfig config = fixture_config(dir.string());
    config.epochs = 10;
    config.patience = 2;
    config.learning_rate = 0.0; // frozen model: validation loss never improves
    DualEncoderModel model = small_model(13);
    const FoldOutcome out = train_fold(model, fx.images, fx.labels, fx.fold, ClassPromptSet::defaults(),
                                       kUniformWeights, config, "stall.ckpt");
    // epoch 0 sets the best; epochs 1 and 2 stagnate; then the loop stops
    CHECK(out.log.epochs.size() == 3);
    CHECK(out.log.best_epoch == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("fold and weight validation") {
    const auto& fx = separable_fixture();
    const auto dir = fresh_dir("densiclip_train_validation");
    const TrainConfig config = fixture_config(dir.string());
    const auto prompts = ClassPromptSet::defaults();
    DualEncoderModel model = small_model(1);

    FoldData empty_train{{}, {0, 1}};
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, empty_train, prompts, kUniformWeights, config, "x.ckpt"),
                    densiclip::data_error);
    FoldData empty_val{{0, 1}, {}};
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, empty_val, prompts, kUniformWeights, config, "x.ckpt"),
                    densiclip::data_error);
    FoldData out_of_range{{0, 100000}, {1}};
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, out_of_range, prompts, kUniformWeights, config, "x.ckpt"),
                    densiclip::data_error);

    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, fx.fold, prompts, {1.0, 2.0}, config, "x.ckpt"),
                    densiclip::data_error);
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, fx.fold, prompts, {1.0, 1.0, -1.0, 1.0}, config, "x.ckpt"),
                    densiclip::data_error);

    TrainConfig big_batch = config;
    big_batch.batch_size = 100000;
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, fx.fold, prompts, kUniformWeights, big_batch, "x.ckpt"),
                    densiclip::config_error);
    TrainConfig no_dir = config;
    no_dir.checkpoint_dir.clear();
    CHECK_THROWS_AS(train_fold(model, fx.images, fx.labels, fx.fold, prompts, kUniformWeights, no_dir, "x.ckpt"),
                    densiclip::config_error);

    std::vector<int> bad_labels = fx.labels;
    bad_labels[0] = 9;
    CHECK_THROWS_AS(train_fold(model, fx.images, bad_labels, fx.fold, prompts, kUniformWeights, config, "x.ckpt"),
                    densiclip::data_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("train config validation and optimizer names") {
    TrainConfig ok;
    ok.checkpoint_dir = "/tmp";
    CHECK_NOTHROW(ok.validate());
    ok.learning_rate = 0.0;
    CHECK_NOTHROW(ok.validate());

    TrainConfig bad = ok;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);
    bad = ok;
    bad.batch_size = -1;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);
    bad = ok;
    bad.learning_rate = -1e-3;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);
    bad = ok;
    bad.adam_beta1 = 1.0;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);
    bad = ok;
    bad.adam_beta2 = -0.1;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);
    bad = ok;
    bad.adam_eps = 0.0;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);
    bad = ok;
    bad.patience = -1;
    CHECK_THROWS_AS(bad.validate(), densiclip::config_error);

    CHECK(densiclip::optimizer_from_string("sgd") == densiclip::Optimizer::sgd);
    CHECK(densiclip::optimizer_from_string("adam") == densiclip::Optimizer::adam);
    CHECK(densiclip::optimizer_name(densiclip::Optimizer::adam) == "adam");
    CHECK(densiclip::optimizer_name(densiclip::Optimizer::sgd) == "sgd");
    CHECK_THROWS_AS(densiclip::optimizer_from_string("rmsprop"), densiclip::config_error);
}

TEST_CASE("train log serialization and equality semantics") {
    TrainLog log;
    log.epochs.push_back({0, 1.5, 1.4, 0.25, 2.0});
    log.epochs.push_back({1, 1.1, 1.0, 0.5, 2.1});
    log.best_epoch = 1;
    log.best_val_loss = 1.0;

    TrainLog same_but_slower = log;
    same_but_slower.epochs[0].seconds = 99.0;
    CHECK(densiclip::logs_equal_ignoring_time(log, same_but_slower));

    TrainLog different = log;
    different.epochs[1].train_loss = 1.2;
    CHECK_FALSE(densiclip::logs_equal_ignoring_time(log, different));
    TrainLog shorter = log;
    shorter.epochs.pop_back();
    CHECK_FALSE(densiclip::logs_equal_ignoring_time(log, shorter));

    const auto dir = fresh_dir("densiclip_train_log");
    const std::string path = (dir / "log.jsonl").string();
    densiclip::write_train_log_jsonl(log, path);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        const auto doc = nlohmann::json::parse(line);
        CHECK(doc.at("epoch") == lines);
        CHECK(doc.contains("train_loss"));
        CHECK(doc.contains("val_loss"));
        CHECK(doc.contains("val_accuracy"));
        CHECK(doc.contains("seconds"));
        ++lines;
    }
    CHECK(lines == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cross-validation trains k folds and aggregates their metrics") {
    // 48 single-study patients, 12 per class, images synthesized on demand
    densiclip::Manifest manifest;
    manifest.dataset_name = "cv-fixture";
    manifest.seed = 5;
    for (int i = 0; i < 48; ++i) {
        densiclip::ImageRecord rec;
        rec.patient_id = "P" + std::to_string(100 + i);
        rec.study_id = rec.patient_id + "_s1";
        rec.image_path = "images/p" + std::to_string(100 + i) + ".png";
        rec.modality = "DM";
        rec.density = static_cast<Density>(i % 4);
        rec.site = "site-1";
        rec.acquired_at = "2024-03-01";
        manifest.records.push_back(rec);
    }

    const densiclip::ImageLoader loader = [](const densiclip::ImageRecord& rec) {
        const uint64_t seed = std::hash<std::string>{}(rec.image_path);
        PhantomSpec spec = spec_for_class(ClassFractionProfile::defaults(), rec.density, seed);
        spec.size = 64;
        return generate_phantom(spec).image;
    };

    const auto dir = fresh_dir("densiclip_cv");
    densiclip::VisionEncoderConfig vision;
    vision.input_size = 64;
    vision.conv_blocks = {{4, 3, 2}, {8, 3, 2}};
    vision.embed_dim = 16;
    densiclip::TextEncoderConfig text;
    text.vocabulary = densiclip::prompt_vocabulary();
    text.token_embed_dim = 8;
    text.embed_dim = 16;

    TrainConfig config;
    config.epochs = 2;
    config.batch_size = 8;
    config.learning_rate = 1e-2;
    config.seed = 17;
    config.checkpoint_dir = dir.string();

    const auto summary =
        densiclip::cross_validate(manifest, loader, 3, ClassPromptSet::defaults(), vision, text, config);

    REQUIRE(summary.fold_outcomes.size() == 3);
    REQUIRE(summary.folds.folds.size() == 3);

    double mean = 0.0;
    for (const auto& fold : summary.fold_outcomes) mean += fold.report.overall_accuracy;
    mean /= 3.0;
    CHECK(std::abs(summary.mean_accuracy - mean) <= 1e-12);

    double ss = 0.0;
    for (const auto& fold : summary.fold_outcomes) {
        const double d = fold.report.overall_accuracy - mean;
        ss += d * d;
    }
    CHECK(std::abs(summary.sd_accuracy - std::sqrt(ss / 2.0)) <= 1e-12);

    for (int f = 0; f < 3; ++f) {
        CHECK(std::filesystem::exists(summary.fold_outcomes[static_cast<size_t>(f)].checkpoint_path));
        CHECK(std::filesystem::exists(dir / ("fold_" + std::to_string(f) + "_train_log.jsonl")));
    }
    REQUIRE(std::filesystem::exists(summary.report_path));
    const auto doc = nlohmann::json::parse(std::ifstream(summary.report_path));
    CHECK(doc.at("k") == 3);
    CHECK(doc.at("folds").size() == 3);
    CHECK(doc.at("mean_accuracy").is_number());

    REQUIRE(summary.mean_class_auc.size() == 4);
    for (const auto& auc : summary.mean_class_auc)
        if (auc.has_value()) {
            CHECK(*auc >= 0.0);
            CHECK(*auc <= 1.0);
        }
    std::filesystem::remove_all(dir);
}
