// Command-line front end for the full pipeline: render labeled phantom
// datasets, standardize the images, split them by patient, train the dual
// encoder, and score checkpoints. Every subcommand reads and writes plain
// files under a run directory and leaves a provenance record (config
// snapshot, seed, input digests) next to its outputs.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "densiclip/curation.hpp"
#include "densiclip/density.hpp"
#include "densiclip/encoder.hpp"
#include "densiclip/errors.hpp"
#include "densiclip/evaluation.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/manifest.hpp"
#include "densiclip/parallel.hpp"
#include "densiclip/phantom.hpp"
#include "densiclip/png_io.hpp"
#include "densiclip/preprocess.hpp"
#include "densiclip/saliency.hpp"
#include "densiclip/training.hpp"

namespace fs = std::filesystem;

using namespace densiclip;

namespace {

// ---------------------------------------------------------------- plumbing

constexpr const char* kRunDirEnv = "DENSICLIP_RUN_DIR";

std::string resolve_run_dir(std::string out) {
    if (out.empty()) {
        if (const char* env = std::getenv(kRunDirEnv)) out = env;
    }
    if (out.empty())
        throw config_error(std::string("no run directory: pass --out or set ") + kRunDirEnv);
    ensure_directory(out);
    return out;
}

void refuse_clobber(const fs::path& path, bool overwrite) {
    if (!overwrite && fs::exists(path))
        throw io_error(path.string() + " already exists; pass --overwrite to replace it");
}

std::string hex_digest(uint64_t h) {
    std::ostringstream out;
    out << "fnv1a:" << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

nlohmann::json file_digest_entry(const std::string& path) {
    return nlohmann::json{{"path", path}, {"digest", hex_digest(fnv1a_file(path))}};
}

// digest of every image a manifest points at, folded together in record
// order so a single changed pixel anywhere changes the digest
nlohmann::json corpus_digest_entry(const Manifest& manifest, const fs::path& root) {
    std::vector<uint64_t> per_file(manifest.records.size());
    parallel_for(0, manifest.records.size(), [&](size_t i) {
        per_file[i] = fnv1a_file((root / manifest.records[i].image_path).string());
    });
    const uint64_t combined = fnv1a(per_file.data(), per_file.size() * sizeof(uint64_t));
    return nlohmann::json{{"path", root.string()},
                          {"role", "image corpus"},
                          {"files", manifest.records.size()},
                          {"digest", hex_digest(combined)}};
}

// ------------------------------------------------------ config file merging

// The --config file is plain key=value, one option per line: keys are the
// subcommand's long option names, '#' starts a comment line, values run to
// the end of the line and may be double-quoted. List options take
// comma-separated values.
std::vector<std::pair<std::string, std::string>> parse_config_lines(const std::string& path) {
    const auto strip = [](const std::string& s) {
        const size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    std::istringstream in(read_text_file(path));
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = strip(line);
        if (text.empty() || text[0] == '#') continue;
        const size_t eq = text.find('=');
        if (eq == std::string::npos || eq == 0)
            throw config_error(path + ":" + std::to_string(line_no) + ": expected key=value");
        std::string key = strip(text.substr(0, eq));
        std::string value = strip(text.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        entries.emplace_back(std::move(key), std::move(value));
    }
    return entries;
}

const CLI::Option* find_long_option(const CLI::App& sub, const std::string& name) {
    for (const CLI::Option* opt : sub.get_options()) {
        const auto& lnames = opt->get_lnames();
        if (std::find(lnames.begin(), lnames.end(), name) != lnames.end()) return opt;
    }
    return nullptr;
}

// Expands a subcommand's --config file into synthetic --key=value tokens
// placed before the explicit flags; options take the last occurrence, so the
// command line wins on conflicts. Unknown keys are rejected by name.
std::vector<std::string> merge_config_into_args(CLI::App& app, int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    size_t sub_pos = 0;
    CLI::App* sub = nullptr;
    for (; sub_pos < args.size(); ++sub_pos) {
        if (args[sub_pos].empty() || args[sub_pos][0] == '-') continue;
        for (CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; }))
            if (s->get_name() == args[sub_pos]) sub = s;
        break; // the first bare token decides; anything unknown is CLI11's to report
    }
    if (!sub) return args;

    std::string cfg_path;
    for (size_t i = sub_pos + 1; i < args.size(); ++i) {
        std::string value;
        if (args[i] == "--config" && i + 1 < args.size()) value = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) value = args[i].substr(9);
        else continue;
        if (!cfg_path.empty()) throw config_error("--config may be given only once");
        cfg_path = value;
    }
    if (cfg_path.empty()) return args;
    if (!fs::exists(cfg_path)) throw config_error("config file not found: " + cfg_path);

    std::vector<std::string> tokens;
    for (const auto& [key, value] : parse_config_lines(cfg_path)) {
        if (key == "config" || key == "help")
            throw config_error(cfg_path + ": key \"" + key + "\" is not allowed inside a config file");
        if (find_long_option(*sub, key) == nullptr)
            throw config_error(cfg_path + ": unknown key \"" + key + "\" for subcommand " + sub->get_name());
        tokens.push_back("--" + key + "=" + value);
    }
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, tokens.begin(), tokens.end());
    return args;
}

// resolved configuration in the exact key=value form --config reads back, so
// a run can be repeated from its own snapshot
std::string config_snapshot_text(const CLI::App& cmd) {
    std::ostringstream out;
    out << "# " << cmd.get_name() << " configuration snapshot\n";
    for (const CLI::Option* opt : cmd.get_options()) {
        const auto& lnames = opt->get_lnames();
        if (lnames.empty()) continue;
        const std::string& name = lnames.front();
        if (name == "config" || name == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            for (size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
        } else if (!opt->get_default_str().empty()) {
            value = opt->get_default_str();
        } else if (opt->get_expected_min() == 0) {
            value = "false"; // an unset flag
        } else {
            continue; // optional value-option that was never given
        }
        out << "# " << opt->get_description() << '\n' << name << '=' << value << "\n\n";
    }
    return out.str();
}

void write_run_provenance(const CLI::App& cmd, const fs::path& run_dir, std::optional<uint64_t> seed,
                          const nlohmann::json& inputs, const nlohmann::json& outputs) {
    const std::string name = cmd.get_name();
    atomic_write_text((run_dir / (name + "_config.cfg")).string(), config_snapshot_text(cmd));
    nlohmann::json doc;
    doc["command"] = name;
    if (seed) doc["seed"] = *seed;
    doc["config_snapshot"] = name + "_config.cfg";
    doc["inputs"] = inputs;
    doc["outputs"] = outputs;
    atomic_write_text((run_dir / (name + "_run.json")).string(), doc.dump(2) + "\n");
}

[[noreturn]] void throw_with_code(int code, const std::string& msg) {
    switch (code) {
        case exit_code::config: throw config_error(msg);
        case exit_code::data: throw data_error(msg);
        case exit_code::numerical: throw numerical_error(msg);
        default: throw io_error(msg);
    }
}

// Collects per-item failures from a data-parallel stage so one bad file
// does not hide the others; the batch then fails with the first item's
// error category.
class FailureLog {
public:
    template <typename Fn>
    void run(size_t index, const std::string& item, Fn&& fn) {
        try {
            fn();
        } catch (const config_error& e) {
            add(index, item, e.what(), exit_code::config);
        } catch (const data_error& e) {
            add(index, item, e.what(), exit_code::data);
        } catch (const numerical_error& e) {
            add(index, item, e.what(), exit_code::numerical);
        } catch (const std::exception& e) {
            add(index, item, e.what(), exit_code::io);
        }
    }

    void raise_if_any(const std::string& stage, size_t total) {
        if (failures_.empty()) return;
        std::sort(failures_.begin(), failures_.end(),
                  [](const Failure& a, const Failure& b) { return a.index < b.index; });
        const size_t shown = std::min<size_t>(failures_.size(), 25);
        for (size_t i = 0; i < shown; ++i)
            std::cerr << stage << ": " << failures_[i].item << ": " << failures_[i].what << '\n';
        if (shown < failures_.size())
            std::cerr << stage << ": ... and " << failures_.size() - shown << " more\n";
        std::ostringstream msg;
        msg << failures_.size() << " of " << total << " items failed during " << stage;
        throw_with_code(failures_.front().code, msg.str());
    }

private:
    struct Failure {
        size_t index;
        std::string item;
        std::string what;
        int code;
    };

    void add(size_t index, const std::string& item, const std::string& what, int code) {
        std::lock_guard<std::mutex> lock(mu_);
        failures_.push_back({index, item, what, code});
    }

    std::mutex mu_;
    std::vector<Failure> failures_;
};

std::string fmt3(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << v;
    return out.str();
}

Array load_model_input(const fs::path& path, int input_size) {
    Array img = read_png_gray(path.string());
    if (img.shape != std::vector<int>{input_size, input_size})
        throw data_error(path.string() + ": expected a preprocessed " + std::to_string(input_size) + "x" +
                         std::to_string(input_size) + " image; run the preprocess step first");
    return img;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::string out;
    bool overwrite = false;
    int jobs = 0;
    std::string name = "phantom";
    int classes = kNumDensityClasses;
    int per_class = 250;
    int size = 256;
    uint64_t seed = 7;
    std::string profile = "default";
    double longitudinal_fraction = 0.15;
    double artifact_fraction = 0.25;
    double intensity_shift = 0.0;
    double noise_level = 0.02;
    int quadrant = -1;
    bool no_masks = false;
};

void run_generate(const CLI::App& cmd, const GenerateArgs& a) {
    set_max_threads(a.jobs);
    if (a.classes != kNumDensityClasses)
        throw config_error("the density scale has exactly 4 classes; --classes must be 4");
    const fs::path run_dir = resolve_run_dir(a.out);
    refuse_clobber(run_dir / "manifest.jsonl", a.overwrite);

    DatasetSpec spec;
    spec.name = a.name;
    spec.per_class = a.per_class;
    spec.image_size = a.size;
    spec.seed = a.seed;
    spec.profile = a.profile == "overlap" ? ClassFractionProfile::overlapping() : ClassFractionProfile::defaults();
    spec.longitudinal_fraction = a.longitudinal_fraction;
    spec.artifact_fraction = a.artifact_fraction;
    spec.intensity_shift = a.intensity_shift;
    spec.noise_level = a.noise_level;
    spec.quadrant = a.quadrant;
    spec.write_masks = !a.no_masks;

    const Manifest manifest = generate_dataset(spec, run_dir.string());

    nlohmann::json outputs = nlohmann::json::array();
    outputs.push_back(file_digest_entry((run_dir / "manifest.jsonl").string()));
    outputs.push_back(corpus_digest_entry(manifest, run_dir));
    write_run_provenance(cmd, run_dir, a.seed, nlohmann::json::array(), outputs);

    std::cout << "generate: " << manifest.records.size() << " images (" << a.per_class << " per class, seed "
              << a.seed << ") -> " << run_dir.string() << '\n';
}

// -------------------------------------------------------------- preprocess

struct PreprocessArgs {
    std::string out;
    bool overwrite = false;
    int jobs = 0;
    std::string manifest;
    int size = 224;
};

void run_preprocess(const CLI::App& cmd, const PreprocessArgs& a) {
    set_max_threads(a.jobs);
    const fs::path run_dir = resolve_run_dir(a.out);
    const fs::path src_root = fs::path(a.manifest).parent_path();
    const Manifest manifest = load_manifest(a.manifest);
    refuse_clobber(run_dir / "manifest.jsonl", a.overwrite);

    // create every output directory up front; the parallel pass only writes files
    std::set<std::string> dirs;
    for (const ImageRecord& rec : manifest.records)
        dirs.insert((run_dir / rec.image_path).parent_path().string());
    dirs.insert((run_dir / "masks").string());
    for (const std::string& dir : dirs) ensure_directory(dir);

    std::atomic<size_t> masks_done{0};
    FailureLog failures;
    parallel_for(0, manifest.records.size(), [&](size_t i) {
        const ImageRecord& rec = manifest.records[i];
        failures.run(i, rec.image_path, [&] {
            const Array raw = read_png_gray((src_root / rec.image_path).string());
            const PreprocessResult res = preprocess_image(raw, a.size);
            write_png_gray16(res.image, (run_dir / rec.image_path).string());
            // ground-truth masks, when the generator wrote them, ride along
            // through the same crop + resize geometry
            const std::string stem = fs::path(rec.image_path).stem().string();
            for (const char* kind : {"_dense.png", "_artifact.png"}) {
                const fs::path mask_src = src_root / "masks" / (stem + kind);
                if (!fs::exists(mask_src)) continue;
                const Array mask = read_png_gray(mask_src.string());
                write_png_gray8(transform_mask(mask, res.crop, a.size),
                                (run_dir / "masks" / (stem + kind)).string());
                ++masks_done;
            }
        });
    });
    failures.raise_if_any("preprocess", manifest.records.size());

    // relative layout is preserved, so the record paths carry over unchanged
    write_manifest(manifest, (run_dir / "manifest.jsonl").string());

    nlohmann::json inputs = nlohmann::json::array();
    inputs.push_back(file_digest_entry(a.manifest));
    inputs.push_back(corpus_digest_entry(manifest, src_root));
    nlohmann::json outputs = nlohmann::json::array();
    outputs.push_back(file_digest_entry((run_dir / "manifest.jsonl").string()));
    outputs.push_back(corpus_digest_entry(manifest, run_dir));
    write_run_provenance(cmd, run_dir, std::nullopt, inputs, outputs);

    std::cout << "preprocess: " << manifest.records.size() << " images -> " << a.size << "x" << a.size
              << " under " << run_dir.string() << " (" << masks_done.load() << " masks)\n";
}

// ------------------------------------------------------------------- split

struct SplitArgs {
    std::string out;
    bool overwrite = false;
    std::string manifest;
    int k = 5;
    uint64_t seed = 0;
    std::vector<int64_t> undersample;
    bool strict_undersample = false;
};

void run_split(const CLI::App& cmd, const SplitArgs& a) {
    const fs::path run_dir = resolve_run_dir(a.out);
    refuse_clobber(run_dir / "folds.json", a.overwrite);

    Manifest manifest = load_manifest(a.manifest);
    if (!a.undersample.empty()) {
        UndersamplePlan plan;
        std::copy(a.undersample.begin(), a.undersample.end(), plan.targets.begin());
        plan.seed = a.seed;
        plan.take_all_shortfall = !a.strict_undersample;
        manifest = undersample(manifest, plan);
    }
    // the curated copy lives in the run directory, so record paths are
    // rebased to stay resolvable relative to their new home
    const fs::path src_root = fs::path(a.manifest).parent_path();
    for (ImageRecord& rec : manifest.records)
        rec.image_path = fs::relative(src_root / rec.image_path, run_dir).generic_string();
    write_manifest(manifest, (run_dir / "curated_manifest.jsonl").string());

    const FoldAssignment folds = stratified_group_kfold(manifest, a.k, a.seed);
    audit_fold_assignment(manifest, folds); // recount every guarantee before anything is published
    write_folds_json(folds, (run_dir / "folds.json").string());

    const std::vector<int64_t> counts = class_counts(manifest);
    const std::array<double, kNumDensityClasses> weights = class_weights(manifest);
    nlohmann::json wdoc;
    for (int c = 0; c < kNumDensityClasses; ++c) {
        const char* name = density_name(static_cast<Density>(c));
        wdoc["counts"][name] = counts[static_cast<size_t>(c)];
        wdoc["weights"][name] = weights[static_cast<size_t>(c)];
    }
    atomic_write_text((run_dir / "weights.json").string(), wdoc.dump(2) + "\n");

    nlohmann::json inputs = nlohmann::json::array();
    inputs.push_back(file_digest_entry(a.manifest));
    nlohmann::json outputs = nlohmann::json::array();
    for (const char* out_name : {"curated_manifest.jsonl", "folds.json", "weights.json"})
        outputs.push_back(file_digest_entry((run_dir / out_name).string()));
    write_run_provenance(cmd, run_dir, a.seed, inputs, outputs);

    std::cout << "split: k=" << a.k << " over " << manifest.records.size() << " images, validation sizes [";
    for (size_t f = 0; f < folds.folds.size(); ++f)
        std::cout << (f ? " " : "") << folds.folds[f].val_indices.size();
    std::cout << "], weights [";
    for (int c = 0; c < kNumDensityClasses; ++c)
        std::cout << (c ? " " : "") << fmt3(weights[static_cast<size_t>(c)]);
    std::cout << "] -> " << run_dir.string() << '\n';
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string out;
    bool overwrite = false;
    int jobs = 0;
    std::string manifest;
    int k = 5;
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    int patience = 0;
    uint64_t seed = 0;
    int input_size = 224;
    int embed_dim = 64;
    std::string conv_blocks = "8:3:2,16:3:2,32:3:2,32:3:2";
    int token_embed_dim = 32;
};

std::vector<ConvBlockConfig> parse_conv_blocks(const std::string& text) {
    std::vector<ConvBlockConfig> blocks;
    std::stringstream groups(text);
    std::string item;
    while (std::getline(groups, item, ',')) {
        ConvBlockConfig b;
        char sep1 = 0, sep2 = 0;
        std::istringstream fields(item);
        fields >> b.channels >> sep1 >> b.kernel >> sep2 >> b.pool_stride;
        if (!fields || sep1 != ':' || sep2 != ':' || !(fields >> std::ws).eof())
            throw config_error("--conv-blocks expects channels:kernel:stride groups, e.g. 8:3:2,16:3:2");
        blocks.push_back(b);
    }
    if (blocks.empty()) throw config_error("--conv-blocks must name at least one block");
    return blocks;
}

void run_train(const CLI::App& cmd, const TrainArgs& a) {
    set_max_threads(a.jobs);
    const fs::path run_dir = resolve_run_dir(a.out);
    const fs::path ckpt_dir = run_dir / "checkpoints";
    refuse_clobber(ckpt_dir / "cv_report.json", a.overwrite);
    ensure_directory(ckpt_dir.string());

    const Manifest manifest = load_manifest(a.manifest);
    const fs::path root = fs::path(a.manifest).parent_path();

    VisionEncoderConfig vision;
    vision.input_size = a.input_size;
    vision.conv_blocks = parse_conv_blocks(a.conv_blocks);
    vision.embed_dim = a.embed_dim;
    TextEncoderConfig text;
    text.vocabulary = prompt_vocabulary();
    text.token_embed_dim = a.token_embed_dim;
    text.embed_dim = a.embed_dim;

    TrainConfig config;
    config.epochs = a.epochs;
    config.batch_size = a.batch_size;
    config.learning_rate = a.learning_rate;
    config.optimizer = optimizer_from_string(a.optimizer);
    config.seed = a.seed;
    config.patience = a.patience;
    config.checkpoint_dir = ckpt_dir.string();

    const int input_size = a.input_size;
    const ImageLoader loader = [root, input_size](const ImageRecord& rec) {
        return load_model_input(root / rec.image_path, input_size);
    };

    const CrossValidationSummary summary =
        cross_validate(manifest, loader, a.k, ClassPromptSet::defaults(), vision, text, config);

    for (size_t f = 0; f < summary.fold_outcomes.size(); ++f) {
        const FoldOutcome& fold = summary.fold_outcomes[f];
        std::cout << "fold " << f << ": val accuracy " << fmt3(fold.report.overall_accuracy) << ", best epoch "
                  << fold.log.best_epoch << " (val loss " << fmt3(fold.log.best_val_loss) << ")\n";
    }

    nlohmann::json inputs = nlohmann::json::array();
    inputs.push_back(file_digest_entry(a.manifest));
    inputs.push_back(corpus_digest_entry(manifest, root));
    nlohmann::json outputs = nlohmann::json::array();
    outputs.push_back(file_digest_entry(summary.report_path));
    for (const FoldOutcome& fold : summary.fold_outcomes)
        outputs.push_back(file_digest_entry(fold.checkpoint_path));
    write_run_provenance(cmd, run_dir, a.seed, inputs, outputs);

    std::cout << "train: mean val accuracy " << fmt3(summary.mean_accuracy) << " +- " << fmt3(summary.sd_accuracy)
              << " over " << a.k << " folds -> " << summary.report_path << '\n';
}

// -------------------------------------------------- evaluate and zero-shot

struct ScoreArgs {
    std::string out;
    bool overwrite = false;
    int jobs = 0;
    std::string checkpoint;
    std::string manifest;
    std::string dataset_id;
    int batch_size = 64;
    std::string audit_split; // evaluate only
};

struct ScoredManifest {
    ZeroShotResult zero_shot;
    EvaluationReport report;
};

ScoredManifest score_manifest(const DualEncoderModel& model, const Manifest& manifest, const fs::path& root,
                              int batch_size, const std::string& dataset_id) {
    const size_t n = manifest.records.size();
    if (n == 0) throw data_error("manifest has no records to score");
    std::vector<Array> images(n);
    FailureLog failures;
    parallel_for(0, n, [&](size_t i) {
        failures.run(i, manifest.records[i].image_path, [&] {
            images[i] = load_model_input(root / manifest.records[i].image_path, model.vision_config().input_size);
        });
    });
    failures.raise_if_any("image loading", n);

    std::vector<const Array*> ptrs;
    ptrs.reserve(n);
    for (const Array& img : images) ptrs.push_back(&img);
    ScoredManifest scored{zero_shot_classify(model, ptrs, ClassPromptSet::defaults(), batch_size), {}};

    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(manifest.records[i].density);
    scored.report =
        build_report(scored.zero_shot.scores, scored.zero_shot.labels, labels, kNumDensityClasses, dataset_id);
    return scored;
}

void write_score_artifacts(const fs::path& run_dir, const Manifest& manifest, const ScoredManifest& scored) {
    write_report_json(scored.report, (run_dir / "report.json").string());
    write_confusion_csv(scored.report, (run_dir / "confusion.csv").string());
    render_confusion_png(scored.report, (run_dir / "confusion.png").string());

    std::ostringstream csv;
    csv << "image_path,truth,prediction";
    for (int c = 0; c < kNumDensityClasses; ++c) csv << ",score_" << density_name(static_cast<Density>(c));
    csv << '\n' << std::setprecision(10);
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        const ImageRecord& rec = manifest.records[i];
        csv << rec.image_path << ',' << density_name(rec.density) << ','
            << density_name(static_cast<Density>(scored.zero_shot.labels[i]));
        for (int c = 0; c < kNumDensityClasses; ++c)
            csv << ',' << scored.zero_shot.scores.at(static_cast<int>(i), c);
        csv << '\n';
    }
    atomic_write_text((run_dir / "predictions.csv").string(), csv.str());
}

void print_score_summary(const std::string& verb, const EvaluationReport& report) {
    std::cout << verb << ": " << report.sample_count << " images, accuracy " << fmt3(report.overall_accuracy);
    if (report.adjacent_error_fraction)
        std::cout << ", adjacent-error fraction " << fmt3(*report.adjacent_error_fraction);
    std::cout << ", AUC";
    for (int c = 0; c < report.k; ++c) {
        const auto& auc = report.per_class_auc[static_cast<size_t>(c)];
        std::cout << ' ' << density_name(static_cast<Density>(c)) << ' ' << (auc ? fmt3(*auc) : "n/a");
    }
    std::cout << '\n';
}

void run_score(const CLI::App& cmd, const ScoreArgs& a, const std::string& verb) {
    set_max_threads(a.jobs);
    if (a.checkpoint.empty() && a.audit_split.empty())
        throw config_error(verb + " needs --checkpoint, --audit-split, or both");
    const fs::path run_dir = resolve_run_dir(a.out);
    const Manifest manifest = load_manifest(a.manifest);
    const fs::path root = fs::path(a.manifest).parent_path();

    nlohmann::json inputs = nlohmann::json::array();
    inputs.push_back(file_digest_entry(a.manifest));
    nlohmann::json outputs = nlohmann::json::array();

    if (!a.audit_split.empty()) {
        const FoldAssignment folds = load_folds_json(a.audit_split, manifest);
        audit_fold_assignment(manifest, folds); // violations surface as data errors
        nlohmann::json audit;
        audit["folds_file"] = a.audit_split;
        audit["k"] = folds.k;
        audit["images"] = manifest.records.size();
        audit["patients"] = studies_per_patient(manifest).size();
        audit["leakage"] = "none";
        atomic_write_text((run_dir / "audit.json").string(), audit.dump(2) + "\n");
        inputs.push_back(file_digest_entry(a.audit_split));
        outputs.push_back(file_digest_entry((run_dir / "audit.json").string()));
        std::cout << "split audit: OK (k=" << folds.k << ", " << manifest.records.size()
                  << " images, no patient leakage)\n";
    }

    if (!a.checkpoint.empty()) {
        refuse_clobber(run_dir / "report.json", a.overwrite);
        const DualEncoderModel model = DualEncoderModel::load(a.checkpoint);
        const std::string dataset_id = a.dataset_id.empty() ? manifest.dataset_name : a.dataset_id;
        const ScoredManifest scored = score_manifest(model, manifest, root, a.batch_size, dataset_id);
        write_score_artifacts(run_dir, manifest, scored);
        inputs.push_back(file_digest_entry(a.checkpoint));
        inputs.push_back(corpus_digest_entry(manifest, root));
        outputs.push_back(file_digest_entry((run_dir / "report.json").string()));
        print_score_summary(verb, scored.report);
    }

    write_run_provenance(cmd, run_dir, std::nullopt, inputs, outputs);
}

// ----------------------------------------------------------------- gradcam

struct GradcamArgs {
    std::string out;
    bool overwrite = false;
    std::string checkpoint;
    std::vector<std::string> images;
    std::string target_class;
    double alpha = 0.4;
    bool raw = false;
};

// one text header line "f32 <rows> <cols>" followed by row-major 32-bit
// floats in host byte order
void write_float_grid(const Array& grid, const std::string& path) {
    std::ostringstream out;
    out << "f32 " << grid.shape[0] << ' ' << grid.shape[1] << '\n';
    for (double v : grid.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    atomic_write_text(path, out.str());
}

void run_gradcam(const CLI::App& cmd, const GradcamArgs& a) {
    const fs::path run_dir = resolve_run_dir(a.out);
    refuse_clobber(run_dir / "gradcam_summary.json", a.overwrite);
    const DualEncoderModel model = DualEncoderModel::load(a.checkpoint);
    const ClassPromptSet prompts = ClassPromptSet::defaults();
    const int input_size = model.vision_config().input_size;
    const int forced = a.target_class.empty() ? -1 : static_cast<int>(density_from_string(a.target_class));

    // saliency backpropagation writes into the model's shared gradient
    // buffers, so images are handled one after another
    std::set<std::string> used_names;
    nlohmann::json items = nlohmann::json::array();
    for (const std::string& path : a.images) {
        Array img = read_png_gray(path);
        if (img.shape != std::vector<int>{input_size, input_size})
            img = preprocess_image(img, input_size).image; // raw inputs go through the standard chain

        const ZeroShotResult zs = zero_shot_classify(model, {&img}, prompts, 1);
        const int target = forced >= 0 ? forced : zs.labels[0];
        const SaliencyMap map = gradcam(model, img, target, prompts, path);

        std::string stem = fs::path(path).stem().string();
        for (int n = 2; !used_names.insert(stem).second; ++n)
            stem = fs::path(path).stem().string() + "_" + std::to_string(n);
        const std::string overlay_name = stem + "_overlay.png";
        write_overlay_png(img, map.grid, (run_dir / overlay_name).string(), a.alpha);

        nlohmann::json item;
        item["source"] = path;
        item["predicted"] = density_name(static_cast<Density>(zs.labels[0]));
        item["target_class"] = density_name(static_cast<Density>(target));
        item["overlay"] = overlay_name;
        if (a.raw) {
            const std::string raw_name = stem + "_saliency.f32";
            write_float_grid(map.raw, (run_dir / raw_name).string());
            item["raw"] = raw_name;
        }
        items.push_back(item);
    }
    nlohmann::json summary;
    summary["items"] = items;
    atomic_write_text((run_dir / "gradcam_summary.json").string(), summary.dump(2) + "\n");

    nlohmann::json inputs = nlohmann::json::array();
    inputs.push_back(file_digest_entry(a.checkpoint));
    for (const std::string& path : a.images) inputs.push_back(file_digest_entry(path));
    nlohmann::json outputs = nlohmann::json::array();
    outputs.push_back(file_digest_entry((run_dir / "gradcam_summary.json").string()));
    write_run_provenance(cmd, run_dir, std::nullopt, inputs, outputs);

    std::cout << "gradcam: " << a.images.size() << " overlays -> " << run_dir.string() << '\n';
}

// ------------------------------------------------------------------- setup

void add_run_dir_options(CLI::App& cmd, std::string& out, bool& overwrite) {
    cmd.add_option("--out", out, std::string("run directory for all outputs (default: $") + kRunDirEnv + ")");
    cmd.add_flag("--overwrite", overwrite, "replace outputs that already exist");
    cmd.set_config("--config", "", "key=value configuration file; command-line flags override it");
    cmd.allow_config_extras(CLI::config_extras_mode::error);
}

void add_jobs_option(CLI::App& cmd, int& jobs) {
    cmd.add_option("--jobs", jobs, "worker threads for per-image work (0 = all hardware threads)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic mammography phantoms, dual-encoder density training, and zero-shot scoring"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "0.1.0");

    GenerateArgs gen_args;
    CLI::App* gen = app.add_subcommand("generate", "render a labeled phantom dataset with manifest and masks");
    add_run_dir_options(*gen, gen_args.out, gen_args.overwrite);
    add_jobs_option(*gen, gen_args.jobs);
    gen->add_option("--name", gen_args.name, "dataset name recorded in the manifest")->capture_default_str();
    gen->add_option("--classes", gen_args.classes, "number of density classes (the grading scale is fixed at 4)")
        ->capture_default_str();
    gen->add_option("--per-class", gen_args.per_class, "images per class")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen->add_option("--size", gen_args.size, "square raw image edge in pixels")
        ->check(CLI::Range(32, 4096))
        ->capture_default_str();
    gen->add_option("--seed", gen_args.seed, "dataset seed; the rendered images are a pure function of it")
        ->capture_default_str();
    gen->add_option("--profile", gen_args.profile,
                    "per-class dense-fraction ranges: disjoint, or overlapping neighbors")
        ->check(CLI::IsMember({"default", "overlap"}))
        ->capture_default_str();
    gen->add_option("--longitudinal-fraction", gen_args.longitudinal_fraction,
                    "fraction of patients that get a second study")
        ->check(CLI::Range(0.0, 0.8))
        ->capture_default_str();
    gen->add_option("--artifact-fraction", gen_args.artifact_fraction,
                    "fraction of images with one rendered artifact (text, paddle, implant, clip)")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    gen->add_option("--intensity-shift", gen_args.intensity_shift, "tissue brightness offset (domain shift)")
        ->check(CLI::Range(-0.2, 0.2))
        ->capture_default_str();
    gen->add_option("--noise-level", gen_args.noise_level, "per-pixel texture amplitude")
        ->check(CLI::Range(0.0, 0.2))
        ->capture_default_str();
    gen->add_option("--quadrant", gen_args.quadrant,
                    "confine dense blobs to one image quadrant 0..3 (-1 = anywhere)")
        ->check(CLI::Range(-1, 3))
        ->capture_default_str();
    gen->add_flag("--no-masks", gen_args.no_masks, "skip the ground-truth mask PNGs");
    gen->callback([&] { run_generate(*gen, gen_args); });

    PreprocessArgs pre_args;
    CLI::App* pre = app.add_subcommand("preprocess", "standardize raw images to the model input size");
    add_run_dir_options(*pre, pre_args.out, pre_args.overwrite);
    add_jobs_option(*pre, pre_args.jobs);
    pre->add_option("--manifest", pre_args.manifest, "input manifest (JSON lines)")
        ->required()
        ->check(CLI::ExistingFile);
    pre->add_option("--size", pre_args.size, "output image edge in pixels")
        ->check(CLI::Range(8, 4096))
        ->capture_default_str();
    pre->callback([&] { run_preprocess(*pre, pre_args); });

    SplitArgs split_args;
    CLI::App* split = app.add_subcommand("split", "undersample and split by patient into stratified folds");
    add_run_dir_options(*split, split_args.out, split_args.overwrite);
    split->add_option("--manifest", split_args.manifest, "input manifest (JSON lines)")
        ->required()
        ->check(CLI::ExistingFile);
    split->add_option("--k", split_args.k, "number of cross-validation folds")
        ->check(CLI::Range(2, 64))
        ->capture_default_str();
    split->add_option("--seed", split_args.seed, "seed for undersampling and fold balancing")
        ->capture_default_str();
    split->add_option("--undersample", split_args.undersample,
                      "per-class image targets A,B,C,D to randomly undersample to")
        ->delimiter(',')
        ->expected(kNumDensityClasses);
    split->add_flag("--strict-undersample", split_args.strict_undersample,
                    "fail when a class cannot reach its undersample target");
    split->callback([&] { run_split(*split, split_args); });

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "k-fold cross-validated contrastive training");
    add_run_dir_options(*train, train_args.out, train_args.overwrite);
    add_jobs_option(*train, train_args.jobs);
    train->add_option("--manifest", train_args.manifest, "preprocessed manifest (JSON lines)")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--k", train_args.k, "number of cross-validation folds")
        ->check(CLI::Range(2, 64))
        ->capture_default_str();
    train->add_option("--epochs", train_args.epochs, "training epochs per fold")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--batch-size", train_args.batch_size, "contrastive batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--lr", train_args.learning_rate, "learning rate (0 freezes the parameters)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    train->add_option("--optimizer", train_args.optimizer, "optimization rule")
        ->check(CLI::IsMember({"adam", "sgd"}))
        ->capture_default_str();
    train->add_option("--patience", train_args.patience,
                      "stop a fold after this many epochs without validation improvement (0 disables)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    train->add_option("--seed", train_args.seed, "seed for fold assignment, initialization, and shuffling")
        ->capture_default_str();
    train->add_option("--input-size", train_args.input_size, "model input edge; must match the preprocessed images")
        ->check(CLI::Range(8, 4096))
        ->capture_default_str();
    train->add_option("--embed-dim", train_args.embed_dim, "shared embedding width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--conv-blocks", train_args.conv_blocks, "vision tower as channels:kernel:stride groups")
        ->capture_default_str();
    train->add_option("--token-embed-dim", train_args.token_embed_dim, "text token embedding width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->callback([&] { run_train(*train, train_args); });

    ScoreArgs eval_args;
    CLI::App* eval = app.add_subcommand("evaluate", "score a checkpoint on a manifest and/or audit a fold split");
    add_run_dir_options(*eval, eval_args.out, eval_args.overwrite);
    add_jobs_option(*eval, eval_args.jobs);
    eval->add_option("--checkpoint", eval_args.checkpoint, "trained model checkpoint")->check(CLI::ExistingFile);
    eval->add_option("--manifest", eval_args.manifest, "manifest of preprocessed images")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--dataset-id", eval_args.dataset_id, "report label (default: the manifest's dataset name)");
    eval->add_option("--batch-size", eval_args.batch_size, "scoring batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    eval->add_option("--audit-split", eval_args.audit_split, "folds.json to recount against the manifest")
        ->check(CLI::ExistingFile);
    eval->callback([&] { run_score(*eval, eval_args, "evaluate"); });

    ScoreArgs zs_args;
    CLI::App* zs = app.add_subcommand("zero-shot", "score a checkpoint on an external manifest without retraining");
    add_run_dir_options(*zs, zs_args.out, zs_args.overwrite);
    add_jobs_option(*zs, zs_args.jobs);
    zs->add_option("--checkpoint", zs_args.checkpoint, "trained model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    zs->add_option("--manifest", zs_args.manifest, "manifest of preprocessed images")
        ->required()
        ->check(CLI::ExistingFile);
    zs->add_option("--dataset-id", zs_args.dataset_id, "report label (default: the manifest's dataset name)");
    zs->add_option("--batch-size", zs_args.batch_size, "scoring batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    zs->callback([&] { run_score(*zs, zs_args, "zero-shot"); });

    GradcamArgs cam_args;
    CLI::App* cam = app.add_subcommand("gradcam", "write saliency overlays for a list of images");
    add_run_dir_options(*cam, cam_args.out, cam_args.overwrite);
    cam->add_option("--checkpoint", cam_args.checkpoint, "trained model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    cam->add_option("--images", cam_args.images, "grayscale PNGs; raw sizes are preprocessed to the model input")
        ->required()
        ->check(CLI::ExistingFile);
    cam->add_option("--target-class", cam_args.target_class,
                    "class whose similarity is explained (default: the model's prediction)")
        ->check(CLI::IsMember({"A", "B", "C", "D"}));
    cam->add_option("--alpha", cam_args.alpha, "overlay blend weight of the colormap")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cam->add_flag("--raw", cam_args.raw, "also write the pre-upsample map as an f32 binary grid");
    cam->callback([&] { run_gradcam(*cam, cam_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e); // --help / --version
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the message and the usage hint
        return exit_code::config;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_code::data;
    } catch (const numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return exit_code::numerical;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_code::io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code::io;
    }
    return exit_code::ok;
}
