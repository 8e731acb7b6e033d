#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "densiclip/array.hpp"
#include "densiclip/curation.hpp"
#include "densiclip/encoder.hpp"
#include "densiclip/evaluation.hpp"
#include "densiclip/loss.hpp"
#include "densiclip/manifest.hpp"

namespace densiclip {

enum class Optimizer { sgd, adam };

Optimizer optimizer_from_string(const std::string& name); // config_error on unknown name
std::string optimizer_name(Optimizer optimizer);

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 1e-3; // zero is allowed and leaves parameters untouched
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    std::string checkpoint_dir;
    int patience = 0; // stop after this many epochs without validation improvement; 0 disables

    void validate() const; // config_error on violation
};

struct EpochStats {
    int epoch = 0; // 0-based, strictly increasing within a log
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0; // wall clock; the only nondeterministic field
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    int best_epoch = -1; // epoch with the lowest validation loss
    double best_val_loss = 0.0;
};

// Exact equality of every logged number except the wall-clock column.
bool logs_equal_ignoring_time(const TrainLog& a, const TrainLog& b);

// One JSON object per epoch, written atomically.
void write_train_log_jsonl(const TrainLog& log, const std::string& path);

// Index lists naming one fold's train and validation rows of an in-memory
// dataset (parallel images/labels vectors).
struct FoldData {
    std::vector<int> train_indices;
    std::vector<int> val_indices;
};

struct FoldOutcome {
    TrainLog log;
    std::string checkpoint_path; // best-validation-loss snapshot on disk
    EvaluationReport report;     // measured on the reloaded checkpoint's validation predictions
};

// Trains the model in place on the fold's training rows, logging one entry
// per epoch. Shuffling each epoch is drawn from (config.seed, epoch) only,
// so a rerun with the same inputs reproduces the log bit for bit. The epoch
// with the lowest validation loss is saved under
// checkpoint_dir/checkpoint_name, reloaded, and used for the final report;
// the model itself keeps its last-epoch parameters. Throws numerical_error
// when a batch loss turns non-finite.
FoldOutcome train_fold(DualEncoderModel& model, const std::vector<Array>& images, const std::vector<int>& labels,
                       const FoldData& fold, const ClassPromptSet& prompts, const std::vector<double>& class_weights,
                       const TrainConfig& config, const std::string& checkpoint_name);

// Loads one preprocessed image for a manifest record. Must tolerate
// concurrent calls for distinct records.
using ImageLoader = std::function<Array(const ImageRecord&)>;

struct CrossValidationSummary {
    FoldAssignment folds;
    std::vector<FoldOutcome> fold_outcomes;
    double mean_accuracy = 0.0;
    double sd_accuracy = 0.0; // sample standard deviation across folds
    std::vector<std::optional<double>> mean_class_auc;
    std::string report_path; // aggregate JSON under checkpoint_dir
};

// Patient-aware k-fold training: splits the manifest, audits the assignment
// before any image is read, then trains one independently initialized model
// per fold with class weights computed from that fold's training labels.
// Writes k checkpoints, k training logs, and one aggregate report into
// config.checkpoint_dir.
CrossValidationSummary cross_validate(const Manifest& manifest, const ImageLoader& loader, int k,
                                      const ClassPromptSet& prompts, const VisionEncoderConfig& vision,
                                      const TextEncoderConfig& text, const TrainConfig& config);

} // namespace densiclip
