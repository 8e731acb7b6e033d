#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densiclip/manifest.hpp"

namespace densiclip {

// Inverse-frequency weights w_c = (N/K) / n_c over the K classes present.
// The per-sample mean of the weights is exactly 1 by construction.
std::vector<double> class_weights_from_counts(const std::vector<int64_t>& counts);

// Weights for the four density classes of a manifest; every class must
// appear at least once.
std::array<double, kNumDensityClasses> class_weights(const Manifest& manifest);

struct UndersamplePlan {
    std::array<int64_t, kNumDensityClasses> targets{};
    uint64_t seed = 0;
    // take-all keeps every image of a class that falls short of its target;
    // strict mode reports the shortfall as an error instead.
    bool take_all_shortfall = true;
};

// Random per-class reduction to the target counts. Whole patients are
// sampled before individual images so patient grouping survives.
Manifest undersample(const Manifest& manifest, const UndersamplePlan& plan);

struct FoldAssignment {
    struct Fold {
        std::vector<std::string> train_patients;
        std::vector<std::string> val_patients;
        std::vector<int> train_indices; // record indices into the manifest
        std::vector<int> val_indices;
    };
    int k = 0;
    std::vector<Fold> folds;
};

// Patient-aware stratified k-fold: longitudinal patients (more than one
// study) go to every fold's training set and no validation set; single-exam
// patients are partitioned across the k validation folds by seeded greedy
// balancing of per-class image counts. Deterministic per seed and invariant
// to the manifest's record order.
FoldAssignment stratified_group_kfold(const Manifest& manifest, int k, uint64_t seed);

// Independent recount of every splitter guarantee straight from the
// manifest: disjoint train/validation patients per fold, longitudinal
// patients train-only everywhere, each single-exam patient in exactly one
// validation fold, full index coverage, and per-fold validation class
// proportions within +-20% relative of the single-exam pool. Throws
// data_error naming the first violation.
void audit_fold_assignment(const Manifest& manifest, const FoldAssignment& folds,
                           double proportion_tolerance = 0.20);

// JSON round-trip; indices are rebuilt against the manifest on load.
void write_folds_json(const FoldAssignment& folds, const std::string& path);
FoldAssignment load_folds_json(const std::string& path, const Manifest& manifest);

} // namespace densiclip
