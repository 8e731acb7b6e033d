#include "densiclip/loss.hpp"

#include <unordered_set>

#include "densiclip/errors.hpp"

namespace densiclip {

ClassPromptSet ClassPromptSet::defaults() {
    ClassPromptSet set;
    for (int c = 0; c < kNumDensityClasses; ++c) {
        set.classes.push_back(static_cast<Density>(c));
        set.prompts.push_back(density_prompt(static_cast<Density>(c)));
    }
    return set;
}

void ClassPromptSet::validate() const {
    if (classes.empty()) throw config_error("prompt set: no classes");
    if (classes.size() != prompts.size()) throw config_error("prompt set: one prompt per class required");
    std::unordered_set<int> seen_classes;
    std::unordered_set<std::string> seen_prompts;
    for (size_t i = 0; i < classes.size(); ++i) {
        if (!seen_classes.insert(static_cast<int>(classes[i])).second)
            throw config_error(std::string("prompt set: duplicate class ") + density_name(classes[i]));
        if (prompts[i].empty()) throw config_error("prompt set: empty prompt");
        if (!seen_prompts.insert(prompts[i]).second)
            throw config_error("prompt set: duplicate prompt \"" + prompts[i] + "\"");
    }
}

std::vector<std::vector<bool>> build_batch_targets(const std::vector<int>& labels, int k) {
    if (k < 2) throw config_error("build_batch_targets: need at least 2 classes");
    std::vector<std::vector<bool>> mask(labels.size(), std::vector<bool>(static_cast<size_t>(k), false));
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw data_error("build_batch_targets: label " + std::to_string(labels[i]) + " outside 0.." +
                             std::to_string(k - 1));
        mask[i][static_cast<size_t>(labels[i])] = true;
    }
    return mask;
}

ad::Var weighted_contrastive_loss(const ad::Var& scaled_similarities, const std::vector<int>& labels,
                                  const std::vector<double>& class_weights) {
    if (!scaled_similarities.defined() || scaled_similarities.value().rank() != 2)
        throw data_error("weighted_contrastive_loss: expects a batch x K similarity matrix");
    const int k = scaled_similarities.value().shape[1];
    if (static_cast<int>(class_weights.size()) != k)
        throw data_error("weighted_contrastive_loss: got " + std::to_string(class_weights.size()) +
                         " class weights for K=" + std::to_string(k));
    for (double w : class_weights)
        if (!(w > 0.0)) throw data_error("weighted_contrastive_loss: class weights must be positive");
    std::vector<double> sample_weights(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw data_error("weighted_contrastive_loss: label " + std::to_string(labels[i]) + " outside 0.." +
                             std::to_string(k - 1));
        sample_weights[i] = class_weights[static_cast<size_t>(labels[i])];
    }
    return ad::weighted_softmax_cross_entropy(scaled_similarities, labels, sample_weights);
}

} // namespace densiclip
