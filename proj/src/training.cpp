#include "densiclip/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <utility>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/parallel.hpp"
#include "densiclip/rng.hpp"

namespace densiclip {

Optimizer optimizer_from_string(const std::string& name) {
    if (name == "sgd") return Optimizer::sgd;
    if (name == "adam") return Optimizer::adam;
    throw config_error("optimizer: expected sgd or adam, got \"" + name + "\"");
}

std::string optimizer_name(Optimizer optimizer) { return optimizer == Optimizer::sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
    if (epochs <= 0) throw config_error("train config: epochs must be positive");
    if (batch_size <= 0) throw config_error("train config: batch size must be positive");
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw config_error("train config: learning rate must be finite and non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw config_error("train config: adam beta1 must be in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw config_error("train config: adam beta2 must be in [0,1)");
    if (!(adam_eps > 0.0)) throw config_error("train config: adam eps must be positive");
    if (patience < 0) throw config_error("train config: patience must be non-negative");
}

bool logs_equal_ignoring_time(const TrainLog& a, const TrainLog& b) {
    if (a.best_epoch != b.best_epoch || a.best_val_loss != b.best_val_loss) return false;
    if (a.epochs.size() != b.epochs.size()) return false;
    for (size_t i = 0; i < a.epochs.size(); ++i) {
        const EpochStats& x = a.epochs[i];
        const EpochStats& y = b.epochs[i];
        if (x.epoch != y.epoch || x.train_loss != y.train_loss || x.val_loss != y.val_loss ||
            x.val_accuracy != y.val_accuracy)
            return false;
    }
    return true;
}

void write_train_log_jsonl(const TrainLog& log, const std::string& path) {
    std::string out;
    for (const EpochStats& e : log.epochs) {
        nlohmann::json line;
        line["epoch"] = e.epoch;
        line["train_loss"] = e.train_loss;
        line["val_loss"] = e.val_loss;
        line["val_accuracy"] = e.val_accuracy;
        line["seconds"] = e.seconds;
        out += line.dump();
        out += '\n';
    }
    atomic_write_text(path, out);
}

namespace {

// First/second moment buffers for adam, lazily shaped on the first step.
struct OptimizerState {
    std::vector<Array> m;
    std::vector<Array> v;
    int64_t step = 0;
};

void apply_updates(DualEncoderModel& model, OptimizerState& state, const TrainConfig& config) {
    const auto& params = model.parameters();
    if (config.optimizer == Optimizer::adam && state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const auto& [name, var] : params) {
            state.m.push_back(Array::zeros(var.value().shape));
            state.v.push_back(Array::zeros(var.value().shape));
        }
    }
    ++state.step;
    const double lr = config.learning_rate;
    for (size_t p = 0; p < params.size(); ++p) {
        const Array& g = params[p].second.grad();
        Array next = params[p].second.value();
        if (config.optimizer == Optimizer::sgd) {
            for (size_t i = 0; i < next.data.size(); ++i) next.data[i] -= lr * g.data[i];
        } else {
            Array& m = state.m[p];
            Array& v = state.v[p];
            const double b1 = config.adam_beta1;
            const double b2 = config.adam_beta2;
            const double m_fix = 1.0 - std::pow(b1, static_cast<double>(state.step));
            const double v_fix = 1.0 - std::pow(b2, static_cast<double>(state.step));
            for (size_t i = 0; i < next.data.size(); ++i) {
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * g.data[i];
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
                next.data[i] -= lr * (m.data[i] / m_fix) / (std::sqrt(v.data[i] / v_fix) + config.adam_eps);
            }
        }
        model.set_parameter(params[p].first, next);
    }
}

struct EvalPass {
    double loss = 0.0;
    std::vector<int> predictions;
};

// Forward-only weighted loss and argmax predictions over the given rows.
// Chunk losses are recombined through their weight mass, so the result is
// independent of the chunking.
EvalPass evaluate_indices(const DualEncoderModel& model, const std::vector<Array>& images,
                          const std::vector<int>& labels, const std::vector<int>& indices,
                          const ClassPromptSet& prompts, const std::vector<double>& class_weights, int batch_size) {
    EvalPass out;
    out.predictions.reserve(indices.size());
    const int input_size = model.vision_config().input_size;
    const size_t chunk = static_cast<size_t>(batch_size);
    double loss_sum = 0.0;
    double weight_total = 0.0;
    for (size_t start = 0; start < indices.size(); start += chunk) {
        const size_t stop = std::min(indices.size(), start + chunk);
        std::vector<const Array*> ptrs;
        std::vector<int> chunk_labels;
        ptrs.reserve(stop - start);
        chunk_labels.reserve(stop - start);
        for (size_t i = start; i < stop; ++i) {
            ptrs.push_back(&images[static_cast<size_t>(indices[i])]);
            chunk_labels.push_back(labels[static_cast<size_t>(indices[i])]);
        }
        const Array batch = DualEncoderModel::stack_images(ptrs, input_size);
        const ad::Var sims = model.similarity_matrix(model.encode_images(batch), model.encode_prompts(prompts));
        const ad::Var loss = weighted_contrastive_loss(sims, chunk_labels, class_weights);
        double chunk_weight = 0.0;
        for (int label : chunk_labels) chunk_weight += class_weights[static_cast<size_t>(label)];
        loss_sum += loss.value().data[0] * chunk_weight;
        weight_total += chunk_weight;
        const Array& s = sims.value();
        for (int r = 0; r < s.shape[0]; ++r) {
            int best = 0;
            for (int c = 1; c < s.shape[1]; ++c)
                if (s.at(r, c) > s.at(r, best)) best = c;
            out.predictions.push_back(best);
        }
    }
    out.loss = loss_sum / weight_total;
    return out;
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

} // namespace

FoldOutcome train_fold(DualEncoderModel& model, const std::vector<Array>& images, const std::vector<int>& labels,
                       const FoldData& fold, const ClassPromptSet& prompts, const std::vector<double>& class_weights,
                       const TrainConfig& config, const std::string& checkpoint_name) {
    config.validate();
    prompts.validate();
    const int k = prompts.size();
    if (images.size() != labels.size()) throw data_error("train_fold: images and labels differ in length");
    if (fold.train_indices.empty()) throw data_error("train_fold: empty training fold");
    if (fold.val_indices.empty()) throw data_error("train_fold: empty validation fold");
    if (static_cast<int>(class_weights.size()) != k)
        throw data_error("train_fold: expected one class weight per prompt");
    for (double w : class_weights)
        if (!std::isfinite(w) || w <= 0.0) throw data_error("train_fold: class weights must be positive");
    const auto check_rows = [&](const std::vector<int>& rows, const char* which) {
        for (int i : rows) {
            if (i < 0 || static_cast<size_t>(i) >= images.size())
                throw data_error(std::string("train_fold: ") + which + " index " + std::to_string(i) +
                                 " out of range");
            const int label = labels[static_cast<size_t>(i)];
            if (label < 0 || label >= k)
                throw data_error(std::string("train_fold: ") + which + " row " + std::to_string(i) +
                                 " has label outside the prompt set");
        }
    };
    check_rows(fold.train_indices, "train");
    check_rows(fold.val_indices, "validation");
    if (static_cast<size_t>(config.batch_size) > fold.train_indices.size())
        throw config_error("train_fold: batch size exceeds the training set");
    if (config.checkpoint_dir.empty()) throw config_error("train_fold: checkpoint directory required");
    if (checkpoint_name.empty()) throw config_error("train_fold: checkpoint name required");

    ensure_directory(config.checkpoint_dir);
    const std::string checkpoint_path = join_path(config.checkpoint_dir, checkpoint_name);
    const int input_size = model.vision_config().input_size;

    OptimizerState optimizer;
    TrainLog log;
    TensorArchive best;
    bool have_best = false;
    int stale_epochs = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();

        // The visit order is a function of (seed, epoch) alone; reruns with
        // the same inputs replay identical batches.
        std::vector<int> order = fold.train_indices;
        Rng(Rng::mix(config.seed, static_cast<uint64_t>(epoch))).shuffle(order);

        double loss_sum = 0.0;
        double weight_total = 0.0;
        const size_t bs = static_cast<size_t>(config.batch_size);
        for (size_t start = 0; start < order.size(); start += bs) {
            const size_t stop = std::min(order.size(), start + bs);
            std::vector<const Array*> ptrs;
            std::vector<int> batch_labels;
            ptrs.reserve(stop - start);
            batch_labels.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) {
                ptrs.push_back(&images[static_cast<size_t>(order[i])]);
                batch_labels.push_back(labels[static_cast<size_t>(order[i])]);
            }
            const Array batch = DualEncoderModel::stack_images(ptrs, input_size);
            const ad::Var sims = model.similarity_matrix(model.encode_images(batch), model.encode_prompts(prompts));
            const ad::Var loss = weighted_contrastive_loss(sims, batch_labels, class_weights);
            const double batch_loss = loss.value().data[0];
            if (!std::isfinite(batch_loss))
                throw numerical_error("train_fold: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(start / bs));
            ad::backward(loss);
            apply_updates(model, optimizer, config);

            double batch_weight = 0.0;
            for (int label : batch_labels) batch_weight += class_weights[static_cast<size_t>(label)];
            loss_sum += batch_loss * batch_weight;
            weight_total += batch_weight;
        }

        const EvalPass val =
            evaluate_indices(model, images, labels, fold.val_indices, prompts, class_weights, config.batch_size);
        if (!std::isfinite(val.loss))
            throw numerical_error("train_fold: non-finite validation loss at epoch " + std::to_string(epoch));
        int correct = 0;
        for (size_t i = 0; i < fold.val_indices.size(); ++i)
            if (val.predictions[i] == labels[static_cast<size_t>(fold.val_indices[i])]) ++correct;

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / weight_total;
        stats.val_loss = val.loss;
        stats.val_accuracy = static_cast<double>(correct) / static_cast<double>(fold.val_indices.size());
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        log.epochs.push_back(stats);

        if (!have_best || stats.val_loss < log.best_val_loss) {
            log.best_epoch = epoch;
            log.best_val_loss = stats.val_loss;
            best = model.to_archive();
            have_best = true;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
            if (config.patience > 0 && stale_epochs >= config.patience) break;
        }
    }

    best.save(checkpoint_path);

    // Report on the reloaded file so the numbers describe the artifact on
    // disk rather than the in-memory float64 state.
    const DualEncoderModel reloaded = DualEncoderModel::load(checkpoint_path);
    std::vector<const Array*> val_ptrs;
    std::vector<int> val_labels;
    val_ptrs.reserve(fold.val_indices.size());
    val_labels.reserve(fold.val_indices.size());
    for (int i : fold.val_indices) {
        val_ptrs.push_back(&images[static_cast<size_t>(i)]);
        val_labels.push_back(labels[static_cast<size_t>(i)]);
    }
    const ZeroShotResult shot = zero_shot_classify(reloaded, val_ptrs, prompts, config.batch_size);

    FoldOutcome out;
    out.log = std::move(log);
    out.checkpoint_path = checkpoint_path;
    out.report = build_report(shot.scores, shot.labels, val_labels, k, checkpoint_name);
    return out;
}

CrossValidationSummary cross_validate(const Manifest& manifest, const ImageLoader& loader, int k,
                                      const ClassPromptSet& prompts, const VisionEncoderConfig& vision,
                                      const TextEncoderConfig& text, const TrainConfig& config) {
    config.validate();
    prompts.validate();
    if (!loader) throw config_error("cross_validate: image loader required");
    if (config.checkpoint_dir.empty()) throw config_error("cross_validate: checkpoint directory required");

    CrossValidationSummary summary;
    summary.folds = stratified_group_kfold(manifest, k, config.seed);
    audit_fold_assignment(manifest, summary.folds);

    std::vector<Array> images(manifest.records.size());
    std::vector<int> labels(manifest.records.size());
    parallel_for(0, manifest.records.size(), [&](size_t i) {
        images[i] = loader(manifest.records[i]);
        labels[i] = static_cast<int>(manifest.records[i].density);
    });

    summary.fold_outcomes.reserve(static_cast<size_t>(summary.folds.k));
    for (int f = 0; f < summary.folds.k; ++f) {
        const FoldAssignment::Fold& fold = summary.folds.folds[static_cast<size_t>(f)];

        std::vector<int64_t> counts(static_cast<size_t>(prompts.size()), 0);
        for (int i : fold.train_indices) ++counts[static_cast<size_t>(labels[static_cast<size_t>(i)])];
        const std::vector<double> weights = class_weights_from_counts(counts);

        // Each fold trains from its own substream so runs stay independent
        // yet fully determined by (config.seed, fold).
        TrainConfig fold_config = config;
        fold_config.seed = Rng::mix(config.seed, static_cast<uint64_t>(f) + 1);
        DualEncoderModel model(vision, text, Rng::mix(fold_config.seed, 0x1a17));

        const std::string tag = "fold_" + std::to_string(f);
        FoldOutcome outcome = train_fold(model, images, labels, {fold.train_indices, fold.val_indices}, prompts,
                                         weights, fold_config, tag + ".ckpt");
        write_train_log_jsonl(outcome.log, join_path(config.checkpoint_dir, tag + "_train_log.jsonl"));
        summary.fold_outcomes.push_back(std::move(outcome));
    }

    const double n = static_cast<double>(summary.fold_outcomes.size());
    double accuracy_sum = 0.0;
    for (const FoldOutcome& fo : summary.fold_outcomes) accuracy_sum += fo.report.overall_accuracy;
    summary.mean_accuracy = accuracy_sum / n;
    double squares = 0.0;
    for (const FoldOutcome& fo : summary.fold_outcomes) {
        const double d = fo.report.overall_accuracy - summary.mean_accuracy;
        squares += d * d;
    }
    summary.sd_accuracy = summary.fold_outcomes.size() > 1 ? std::sqrt(squares / (n - 1.0)) : 0.0;

    summary.mean_class_auc.assign(static_cast<size_t>(prompts.size()), std::nullopt);
    for (size_t c = 0; c < summary.mean_class_auc.size(); ++c) {
        double total = 0.0;
        int have = 0;
        for (const FoldOutcome& fo : summary.fold_outcomes) {
            if (fo.report.per_class_auc[c]) {
                total += *fo.report.per_class_auc[c];
                ++have;
            }
        }
        if (have > 0) summary.mean_class_auc[c] = total / have;
    }

    nlohmann::json doc;
    doc["k"] = summary.folds.k;
    doc["mean_accuracy"] = summary.mean_accuracy;
    doc["sd_accuracy"] = summary.sd_accuracy;
    nlohmann::json auc = nlohmann::json::array();
    for (const auto& v : summary.mean_class_auc) auc.push_back(v ? nlohmann::json(*v) : nlohmann::json());
    doc["mean_class_auc"] = auc;
    nlohmann::json folds = nlohmann::json::array();
    for (size_t f = 0; f < summary.fold_outcomes.size(); ++f) {
        const FoldOutcome& fo = summary.fold_outcomes[f];
        nlohmann::json entry;
        entry["fold"] = f;
        entry["accuracy"] = fo.report.overall_accuracy;
        entry["best_epoch"] = fo.log.best_epoch;
        entry["best_val_loss"] = fo.log.best_val_loss;
        entry["checkpoint"] = std::filesystem::path(fo.checkpoint_path).filename().string();
        folds.push_back(entry);
    }
    doc["folds"] = folds;
    summary.report_path = join_path(config.checkpoint_dir, "cv_report.json");
    atomic_write_text(summary.report_path, doc.dump(2) + "\n");

    return summary;
}

} // namespace densiclip
