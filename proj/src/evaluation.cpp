#include "densiclip/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "densiclip/colormap.hpp"
#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/png_io.hpp"

namespace densiclip {

ZeroShotResult zero_shot_classify(const DualEncoderModel& model, const std::vector<const Array*>& images,
                                  const ClassPromptSet& prompts, int batch_size) {
    if (images.empty()) throw data_error("zero_shot_classify: empty image list");
    if (batch_size < 1) throw config_error("zero_shot_classify: batch size must be positive");
    const int k = prompts.size();
    const int n = static_cast<int>(images.size());
    ZeroShotResult result;
    result.scores = Array::zeros({n, k});
    result.labels.resize(static_cast<size_t>(n));
    for (int start = 0; start < n; start += batch_size) {
        const int stop = std::min(n, start + batch_size);
        std::vector<const Array*> batch(images.begin() + start, images.begin() + stop);
        const Array stacked = DualEncoderModel::stack_images(batch, model.vision_config().input_size);
        const Array sims = model.similarity_matrix(stacked, prompts);
        for (int i = 0; i < stop - start; ++i) {
            double mx = sims.at(i, 0);
            for (int c = 1; c < k; ++c) mx = std::max(mx, sims.at(i, c));
            double z = 0.0;
            for (int c = 0; c < k; ++c) z += std::exp(sims.at(i, c) - mx);
            int arg = 0;
            for (int c = 0; c < k; ++c) {
                result.scores.at(start + i, c) = std::exp(sims.at(i, c) - mx) / z;
                if (sims.at(i, c) > sims.at(i, arg)) arg = c;
            }
            result.labels[static_cast<size_t>(start + i)] = arg;
        }
    }
    return result;
}

double auc_one_vs_rest(const std::vector<double>& scores, const std::vector<int>& positive) {
    if (scores.size() != positive.size())
        throw data_error("auc_one_vs_rest: scores and labels differ in length");
    if (scores.empty()) throw data_error("auc_one_vs_rest: empty input");
    const auto n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    int64_t n_pos = 0;
    for (int p : positive) n_pos += p ? 1 : 0;
    const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw data_error("auc_one_vs_rest: need both positive and negative samples");

    // average ranks over tie runs, then the Mann-Whitney U of the positives
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t t = i; t <= j; ++t)
            if (positive[order[t]]) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

EvaluationReport confusion_and_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels, int k,
                                        const std::string& dataset_id) {
    if (predictions.size() != labels.size())
        throw data_error("confusion_and_accuracy: predictions and labels differ in length");
    if (predictions.empty()) throw data_error("confusion_and_accuracy: empty input");
    if (k < 2) throw config_error("confusion_and_accuracy: need at least 2 classes");

    EvaluationReport report;
    report.dataset_id = dataset_id;
    report.k = k;
    report.sample_count = static_cast<int64_t>(predictions.size());
    report.confusion.assign(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k), 0));
    int64_t correct = 0, errors = 0, adjacent = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], t = labels[i];
        if (p < 0 || p >= k || t < 0 || t >= k)
            throw data_error("confusion_and_accuracy: class index outside 0.." + std::to_string(k - 1));
        ++report.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)];
        if (p == t) {
            ++correct;
        } else {
            ++errors;
            if (std::abs(p - t) == 1) ++adjacent;
        }
    }
    report.overall_accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());
    for (int c = 0; c < k; ++c) {
        const auto& row = report.confusion[static_cast<size_t>(c)];
        const int64_t row_sum = std::accumulate(row.begin(), row.end(), int64_t{0});
        if (row_sum > 0)
            report.per_class_accuracy.push_back(static_cast<double>(row[static_cast<size_t>(c)]) /
                                                static_cast<double>(row_sum));
        else
            report.per_class_accuracy.push_back(std::nullopt);
        report.per_class_auc.push_back(std::nullopt);
    }
    if (errors > 0) report.adjacent_error_fraction = static_cast<double>(adjacent) / static_cast<double>(errors);
    return report;
}

EvaluationReport build_report(const Array& scores, const std::vector<int>& predictions,
                              const std::vector<int>& labels, int k, const std::string& dataset_id) {
    if (scores.rank() != 2 || scores.shape[0] != static_cast<int>(labels.size()) || scores.shape[1] != k)
        throw data_error("build_report: score matrix must be {N,K} matching the labels");
    EvaluationReport report = confusion_and_accuracy(predictions, labels, k, dataset_id);
    for (int c = 0; c < k; ++c) {
        std::vector<double> class_scores(labels.size());
        std::vector<int> positive(labels.size());
        int64_t n_pos = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            class_scores[i] = scores.at(static_cast<int>(i), c);
            positive[i] = labels[i] == c ? 1 : 0;
            n_pos += positive[i];
        }
        if (n_pos > 0 && n_pos < static_cast<int64_t>(labels.size()))
            report.per_class_auc[static_cast<size_t>(c)] = auc_one_vs_rest(class_scores, positive);
    }
    return report;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

std::string class_label(int c, int k) {
    if (k == kNumDensityClasses) return density_name(static_cast<Density>(c));
    return "class_" + std::to_string(c);
}

} // namespace

void write_report_json(const EvaluationReport& report, const std::string& path) {
    nlohmann::json doc;
    doc["dataset_id"] = report.dataset_id;
    doc["sample_count"] = report.sample_count;
    doc["overall_accuracy"] = report.overall_accuracy;
    doc["adjacent_error_fraction"] = optional_json(report.adjacent_error_fraction);
    nlohmann::json auc, acc;
    for (int c = 0; c < report.k; ++c) {
        auc[class_label(c, report.k)] = optional_json(report.per_class_auc[static_cast<size_t>(c)]);
        acc[class_label(c, report.k)] = optional_json(report.per_class_accuracy[static_cast<size_t>(c)]);
    }
    doc["per_class_auc"] = auc;
    doc["per_class_accuracy"] = acc;
    doc["confusion"] = report.confusion;
    atomic_write_text(path, doc.dump(2) + "\n");
}

void write_confusion_csv(const EvaluationReport& report, const std::string& path) {
    std::ostringstream out;
    out << "truth\\prediction";
    for (int c = 0; c < report.k; ++c) out << "," << class_label(c, report.k);
    out << "\n";
    for (int r = 0; r < report.k; ++r) {
        out << class_label(r, report.k);
        for (int c = 0; c < report.k; ++c) out << "," << report.confusion[static_cast<size_t>(r)][static_cast<size_t>(c)];
        out << "\n";
    }
    atomic_write_text(path, out.str());
}

void render_confusion_png(const EvaluationReport& report, const std::string& path, int cell_size) {
    if (cell_size < 4) throw config_error("render_confusion_png: cell size too small");
    int64_t peak = 1;
    for (const auto& row : report.confusion)
        for (int64_t v : row) peak = std::max(peak, v);
    const int border = 2;
    const int side = report.k * cell_size + (report.k + 1) * border;
    std::vector<uint8_t> rgb(static_cast<size_t>(side) * side * 3, 30);
    for (int r = 0; r < report.k; ++r)
        for (int c = 0; c < report.k; ++c) {
            const double heat =
                static_cast<double>(report.confusion[static_cast<size_t>(r)][static_cast<size_t>(c)]) /
                static_cast<double>(peak);
            const auto color = jet_color(heat);
            const int y0 = border + r * (cell_size + border);
            const int x0 = border + c * (cell_size + border);
            for (int y = y0; y < y0 + cell_size; ++y)
                for (int x = x0; x < x0 + cell_size; ++x) {
                    const size_t at = (static_cast<size_t>(y) * side + x) * 3;
                    rgb[at] = color[0];
                    rgb[at + 1] = color[1];
                    rgb[at + 2] = color[2];
                }
        }
    write_png_rgb8(rgb, side, side, path);
}

} // namespace densiclip
