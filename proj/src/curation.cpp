#include "densiclip/curation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <unordered_map>

#include "densiclip/errors.hpp"
#include "densiclip/fsio.hpp"
#include "densiclip/rng.hpp"

namespace densiclip {

namespace {

struct PatientGroup {
    std::string id;
    std::vector<int> indices;          // record indices, ascending
    std::array<int64_t, kNumDensityClasses> per_class{};
    bool longitudinal = false;

    int64_t image_count() const { return static_cast<int64_t>(indices.size()); }
    int majority_class() const {
        int best = 0;
        for (int c = 1; c < kNumDensityClasses; ++c)
            if (per_class[static_cast<size_t>(c)] > per_class[static_cast<size_t>(best)]) best = c;
        return best;
    }
};

// Patients in deterministic id order, independent of record order.
std::vector<PatientGroup> group_by_patient(const Manifest& manifest) {
    std::map<std::string, PatientGroup> groups;
    const auto studies = studies_per_patient(manifest);
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        auto& g = groups[rec.patient_id];
        g.id = rec.patient_id;
        g.indices.push_back(static_cast<int>(i));
        ++g.per_class[static_cast<size_t>(rec.density)];
    }
    std::vector<PatientGroup> out;
    out.reserve(groups.size());
    for (auto& [id, g] : groups) {
        std::sort(g.indices.begin(), g.indices.end());
        g.longitudinal = is_longitudinal(studies, id);
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace

std::vector<double> class_weights_from_counts(const std::vector<int64_t>& counts) {
    if (counts.empty()) throw data_error("class_weights: no classes given");
    int64_t total = 0;
    for (int64_t n : counts) {
        if (n <= 0) throw data_error("class_weights: every class must have at least one sample");
        total += n;
    }
    const double per_class = static_cast<double>(total) / static_cast<double>(counts.size());
    std::vector<double> weights(counts.size());
    for (size_t c = 0; c < counts.size(); ++c) weights[c] = per_class / static_cast<double>(counts[c]);
    return weights;
}

std::array<double, kNumDensityClasses> class_weights(const Manifest& manifest) {
    const auto counts = class_counts(manifest);
    for (int c = 0; c < kNumDensityClasses; ++c)
        if (counts[static_cast<size_t>(c)] == 0)
            throw data_error(std::string("class_weights: class ") + density_name(static_cast<Density>(c)) +
                             " has no samples");
    const auto weights = class_weights_from_counts(counts);
    std::array<double, kNumDensityClasses> out{};
    std::copy(weights.begin(), weights.end(), out.begin());
    return out;
}

Manifest undersample(const Manifest& manifest, const UndersamplePlan& plan) {
    for (int64_t t : plan.targets)
        if (t <= 0) throw config_error("undersample: targets must be positive");
    const auto available = class_counts(manifest);
    if (!plan.take_all_shortfall)
        for (int c = 0; c < kNumDensityClasses; ++c)
            if (plan.targets[static_cast<size_t>(c)] > available[static_cast<size_t>(c)])
                throw data_error(std::string("undersample: class ") + density_name(static_cast<Density>(c)) +
                                 " has only " + std::to_string(available[static_cast<size_t>(c)]) +
                                 " images, target is " + std::to_string(plan.targets[static_cast<size_t>(c)]));

    const auto patients = group_by_patient(manifest);
    std::vector<bool> selected(manifest.records.size(), false);
    for (int c = 0; c < kNumDensityClasses; ++c) {
        const int64_t target = std::min(plan.targets[static_cast<size_t>(c)], available[static_cast<size_t>(c)]);
        // patient groups holding class-c images, shuffled by seed
        std::vector<std::pair<std::string, std::vector<int>>> groups;
        for (const auto& p : patients) {
            std::vector<int> idx;
            for (int i : p.indices)
                if (manifest.records[static_cast<size_t>(i)].density == static_cast<Density>(c)) idx.push_back(i);
            if (!idx.empty()) groups.emplace_back(p.id, std::move(idx));
        }
        Rng rng(Rng::mix(plan.seed, static_cast<uint64_t>(c)));
        rng.shuffle(groups);
        int64_t taken = 0;
        for (auto& [id, idx] : groups) {
            if (taken >= target) break;
            if (taken + static_cast<int64_t>(idx.size()) <= target) {
                for (int i : idx) selected[static_cast<size_t>(i)] = true;
                taken += static_cast<int64_t>(idx.size());
            } else {
                // the last patient only partially fits; take a random subset
                rng.shuffle(idx);
                for (int64_t j = 0; taken < target; ++j, ++taken) selected[static_cast<size_t>(idx[j])] = true;
            }
        }
    }

    Manifest out;
    out.dataset_name = manifest.dataset_name;
    out.seed = manifest.seed;
    for (size_t i = 0; i < manifest.records.size(); ++i)
        if (selected[i]) out.records.push_back(manifest.records[i]);
    return out;
}

FoldAssignment stratified_group_kfold(const Manifest& manifest, int k, uint64_t seed) {
    if (k < 2) throw config_error("stratified_group_kfold: k must be at least 2");
    const auto patients = group_by_patient(manifest);

    std::vector<const PatientGroup*> singles;
    std::vector<const PatientGroup*> longitudinal;
    std::array<int64_t, kNumDensityClasses> single_patients_per_class{};
    for (const auto& p : patients) {
        if (p.longitudinal) {
            longitudinal.push_back(&p);
        } else {
            singles.push_back(&p);
            ++single_patients_per_class[static_cast<size_t>(p.majority_class())];
        }
    }
    for (int c = 0; c < kNumDensityClasses; ++c) {
        const int64_t have = single_patients_per_class[static_cast<size_t>(c)];
        if (have > 0 && have < k)
            throw data_error(std::string("stratified_group_kfold: class ") + density_name(static_cast<Density>(c)) +
                             " has only " + std::to_string(have) + " single-exam patients for k=" + std::to_string(k));
    }

    // greedy balancing: big groups first within each class, seeded order
    // among equals, each patient to the fold currently lightest in their
    // class (ties: lightest overall, then lowest index)
    struct Keyed {
        const PatientGroup* p;
        uint64_t rank;
    };
    std::vector<Keyed> order;
    order.reserve(singles.size());
    for (const auto* p : singles)
        order.push_back({p, Rng::mix(seed, fnv1a(p->id.data(), p->id.size()))});
    std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
        const int ca = a.p->majority_class(), cb = b.p->majority_class();
        if (ca != cb) return ca < cb;
        if (a.p->image_count() != b.p->image_count()) return a.p->image_count() > b.p->image_count();
        if (a.rank != b.rank) return a.rank < b.rank;
        return a.p->id < b.p->id;
    });

    std::vector<std::array<int64_t, kNumDensityClasses>> fold_class_images(static_cast<size_t>(k));
    for (auto& f : fold_class_images) f.fill(0);
    std::vector<int64_t> fold_total(static_cast<size_t>(k), 0);
    std::vector<std::vector<const PatientGroup*>> fold_members(static_cast<size_t>(k));
    for (const auto& keyed : order) {
        const int cls = keyed.p->majority_class();
        int best = 0;
        for (int f = 1; f < k; ++f) {
            const auto& cand = fold_class_images[static_cast<size_t>(f)][static_cast<size_t>(cls)];
            const auto& cur = fold_class_images[static_cast<size_t>(best)][static_cast<size_t>(cls)];
            if (cand < cur || (cand == cur && fold_total[static_cast<size_t>(f)] < fold_total[static_cast<size_t>(best)]))
                best = f;
        }
        fold_members[static_cast<size_t>(best)].push_back(keyed.p);
        for (int c = 0; c < kNumDensityClasses; ++c)
            fold_class_images[static_cast<size_t>(best)][static_cast<size_t>(c)] += keyed.p->per_class[static_cast<size_t>(c)];
        fold_total[static_cast<size_t>(best)] += keyed.p->image_count();
    }

    FoldAssignment assignment;
    assignment.k = k;
    assignment.folds.resize(static_cast<size_t>(k));
    for (int f = 0; f < k; ++f) {
        auto& fold = assignment.folds[static_cast<size_t>(f)];
        for (const auto* p : fold_members[static_cast<size_t>(f)]) fold.val_patients.push_back(p->id);
        std::sort(fold.val_patients.begin(), fold.val_patients.end());
        for (const auto* p : singles)
            if (std::find(fold.val_patients.begin(), fold.val_patients.end(), p->id) == fold.val_patients.end())
                fold.train_patients.push_back(p->id);
        for (const auto* p : longitudinal) fold.train_patients.push_back(p->id);
        std::sort(fold.train_patients.begin(), fold.train_patients.end());

        std::unordered_map<std::string, bool> in_val;
        for (const auto& id : fold.val_patients) in_val[id] = true;
        for (size_t i = 0; i < manifest.records.size(); ++i) {
            if (in_val.count(manifest.records[i].patient_id))
                fold.val_indices.push_back(static_cast<int>(i));
            else
                fold.train_indices.push_back(static_cast<int>(i));
        }
    }
    return assignment;
}

void audit_fold_assignment(const Manifest& manifest, const FoldAssignment& folds, double proportion_tolerance) {
    if (folds.k < 2 || folds.folds.size() != static_cast<size_t>(folds.k))
        throw data_error("fold audit: fold count does not match k");

    const auto studies = studies_per_patient(manifest);
    std::unordered_map<std::string, std::array<int64_t, kNumDensityClasses>> patient_class_images;
    for (const auto& rec : manifest.records)
        ++patient_class_images[rec.patient_id][static_cast<size_t>(rec.density)];

    // global class pool over single-exam patients, the stratification target
    std::array<int64_t, kNumDensityClasses> global_counts{};
    int64_t global_total = 0;
    for (const auto& [id, per_class] : patient_class_images) {
        if (is_longitudinal(studies, id)) continue;
        for (int c = 0; c < kNumDensityClasses; ++c) {
            global_counts[static_cast<size_t>(c)] += per_class[static_cast<size_t>(c)];
            global_total += per_class[static_cast<size_t>(c)];
        }
    }

    std::unordered_map<std::string, int> val_fold_of;
    for (int f = 0; f < folds.k; ++f) {
        const auto& fold = folds.folds[static_cast<size_t>(f)];
        std::unordered_map<std::string, bool> train, val;
        for (const auto& id : fold.train_patients) train[id] = true;
        for (const auto& id : fold.val_patients) val[id] = true;
        for (const auto& id : fold.val_patients)
            if (train.count(id))
                throw data_error("fold audit: patient " + id + " is in both train and validation of fold " +
                                 std::to_string(f));
        for (const auto& [id, per_class] : patient_class_images) {
            const bool in_train = train.count(id) > 0, in_val = val.count(id) > 0;
            if (!in_train && !in_val)
                throw data_error("fold audit: patient " + id + " is missing from fold " + std::to_string(f));
            if (is_longitudinal(studies, id) && in_val)
                throw data_error("fold audit: longitudinal patient " + id + " is in validation of fold " +
                                 std::to_string(f));
            if (in_val) {
                const auto [it, inserted] = val_fold_of.emplace(id, f);
                if (!inserted)
                    throw data_error("fold audit: patient " + id + " is in validation of folds " +
                                     std::to_string(it->second) + " and " + std::to_string(f));
            }
        }

        // index recount: every record exactly once, on its patient's side
        std::vector<int> seen(manifest.records.size(), 0);
        for (int i : fold.train_indices) {
            if (i < 0 || i >= static_cast<int>(manifest.records.size()) ||
                !train.count(manifest.records[static_cast<size_t>(i)].patient_id))
                throw data_error("fold audit: bad train index " + std::to_string(i) + " in fold " + std::to_string(f));
            ++seen[static_cast<size_t>(i)];
        }
        for (int i : fold.val_indices) {
            if (i < 0 || i >= static_cast<int>(manifest.records.size()) ||
                !val.count(manifest.records[static_cast<size_t>(i)].patient_id))
                throw data_error("fold audit: bad validation index " + std::to_string(i) + " in fold " +
                                 std::to_string(f));
            ++seen[static_cast<size_t>(i)];
        }
        for (size_t i = 0; i < seen.size(); ++i)
            if (seen[i] != 1)
                throw data_error("fold audit: record " + std::to_string(i) + " appears " + std::to_string(seen[i]) +
                                 " times in fold " + std::to_string(f));

        // stratification within tolerance
        std::array<int64_t, kNumDensityClasses> fold_counts{};
        int64_t fold_total = 0;
        for (int i : fold.val_indices) {
            ++fold_counts[static_cast<size_t>(manifest.records[static_cast<size_t>(i)].density)];
            ++fold_total;
        }
        if (fold_total == 0) throw data_error("fold audit: fold " + std::to_string(f) + " has an empty validation set");
        for (int c = 0; c < kNumDensityClasses; ++c) {
            if (global_counts[static_cast<size_t>(c)] == 0) continue;
            const double global_prop =
                static_cast<double>(global_counts[static_cast<size_t>(c)]) / static_cast<double>(global_total);
            const double fold_prop =
                static_cast<double>(fold_counts[static_cast<size_t>(c)]) / static_cast<double>(fold_total);
            if (std::abs(fold_prop - global_prop) > proportion_tolerance * global_prop + 1e-12)
                throw data_error(std::string("fold audit: class ") + density_name(static_cast<Density>(c)) +
                                 " proportion " + std::to_string(fold_prop) + " in fold " + std::to_string(f) +
                                 " deviates more than " + std::to_string(proportion_tolerance * 100) +
                                 "% from the global " + std::to_string(global_prop));
        }
    }

    // coverage: every single-exam patient validated somewhere
    for (const auto& [id, per_class] : patient_class_images)
        if (!is_longitudinal(studies, id) && !val_fold_of.count(id))
            throw data_error("fold audit: single-exam patient " + id + " is in no validation fold");
}

void write_folds_json(const FoldAssignment& folds, const std::string& path) {
    nlohmann::json doc;
    doc["k"] = folds.k;
    doc["folds"] = nlohmann::json::array();
    for (const auto& fold : folds.folds) {
        nlohmann::json f;
        f["train_patients"] = fold.train_patients;
        f["val_patients"] = fold.val_patients;
        doc["folds"].push_back(std::move(f));
    }
    atomic_write_text(path, doc.dump(2) + "\n");
}

FoldAssignment load_folds_json(const std::string& path, const Manifest& manifest) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": malformed fold file: " + e.what());
    }
    FoldAssignment folds;
    try {
        folds.k = doc.at("k").get<int>();
        for (const auto& f : doc.at("folds")) {
            FoldAssignment::Fold fold;
            fold.train_patients = f.at("train_patients").get<std::vector<std::string>>();
            fold.val_patients = f.at("val_patients").get<std::vector<std::string>>();
            folds.folds.push_back(std::move(fold));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": malformed fold file: " + e.what());
    }

    std::unordered_map<std::string, bool> known;
    for (const auto& rec : manifest.records) known[rec.patient_id] = true;
    for (auto& fold : folds.folds) {
        std::unordered_map<std::string, bool> in_val;
        for (const auto& id : fold.val_patients) {
            if (!known.count(id)) throw data_error(path + ": unknown patient " + id);
            in_val[id] = true;
        }
        for (const auto& id : fold.train_patients)
            if (!known.count(id)) throw data_error(path + ": unknown patient " + id);
        for (size_t i = 0; i < manifest.records.size(); ++i) {
            if (in_val.count(manifest.records[i].patient_id))
                fold.val_indices.push_back(static_cast<int>(i));
            else
                fold.train_indices.push_back(static_cast<int>(i));
        }
    }
    return folds;
}

} // namespace densiclip
