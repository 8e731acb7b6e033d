#pragma once

#include <string>
#include <vector>

#include "densiclip/autodiff.hpp"
#include "densiclip/density.hpp"

namespace densiclip {

// The K ordered classes and their fixed textual prompts.
struct ClassPromptSet {
    std::vector<Density> classes;
    std::vector<std::string> prompts;

    static ClassPromptSet defaults(); // the four density descriptions
    void validate() const;            // one prompt per class, no duplicates
    int size() const { return static_cast<int>(classes.size()); }
};

// batch x K positive-pair mask: true where the row's label matches the
// column's class. Exactly one true per row.
std::vector<std::vector<bool>> build_batch_targets(const std::vector<int>& labels, int k);

// Class-weighted softmax cross-entropy over the K prompt columns:
//   loss = sum_i w(y_i) * CE(softmax(row_i), y_i) / sum_i w(y_i)
// Differentiable through the scaled similarity matrix.
ad::Var weighted_contrastive_loss(const ad::Var& scaled_similarities, const std::vector<int>& labels,
                                  const std::vector<double>& class_weights);

} // namespace densiclip
