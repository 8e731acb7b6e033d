#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "densiclip/array.hpp"
#include "densiclip/encoder.hpp"
#include "densiclip/loss.hpp"

namespace densiclip {

struct EvaluationReport {
    std::string dataset_id;
    int k = 0;
    std::vector<std::optional<double>> per_class_auc;      // null when a class lacks positives or negatives
    std::vector<std::optional<double>> per_class_accuracy; // recall; null when the class is absent
    double overall_accuracy = 0.0;
    std::vector<std::vector<int64_t>> confusion; // rows = truth, columns = prediction
    std::optional<double> adjacent_error_fraction; // null when there are no errors
    int64_t sample_count = 0;
};

struct ZeroShotResult {
    Array scores;            // {N,K} softmax of temperature-scaled similarities
    std::vector<int> labels; // argmax per row, lowest class index on ties
};

// Nearest-prompt classification without task-specific training.
ZeroShotResult zero_shot_classify(const DualEncoderModel& model, const std::vector<const Array*>& images,
                                  const ClassPromptSet& prompts, int batch_size = 64);

// One-vs-rest AUC via the Mann-Whitney rank statistic, ties credited 0.5.
// positive[i] is nonzero for class members. Requires both a positive and a
// negative sample.
double auc_one_vs_rest(const std::vector<double>& scores, const std::vector<int>& positive);

// Confusion matrix, per-class recall, overall accuracy, and the fraction of
// errors landing on an adjacent class.
EvaluationReport confusion_and_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels, int k,
                                        const std::string& dataset_id = {});

// Full report: confusion statistics plus per-class one-vs-rest AUCs from the
// {N,K} score matrix.
EvaluationReport build_report(const Array& scores, const std::vector<int>& predictions,
                              const std::vector<int>& labels, int k, const std::string& dataset_id = {});

void write_report_json(const EvaluationReport& report, const std::string& path);
void write_confusion_csv(const EvaluationReport& report, const std::string& path);
void render_confusion_png(const EvaluationReport& report, const std::string& path, int cell_size = 48);

} // namespace densiclip
