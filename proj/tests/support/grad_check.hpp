#pragma once

// Finite-difference gradient oracle. Independent of the backward pass: it
// only re-runs forward graphs at perturbed leaf values.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "densiclip/autodiff.hpp"
#include "densiclip/rng.hpp"

namespace gradcheck {

using densiclip::Array;
using densiclip::Rng;
namespace ad = densiclip::ad;

// Builds a scalar graph from leaf values. Called repeatedly with perturbed
// copies, so it must not keep state.
using ScalarBuilder = std::function<ad::Var(const std::vector<ad::Var>&)>;

struct CheckResult {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

inline double rel_err(double a, double b) {
    const double denom = std::max({1e-6, std::abs(a), std::abs(b)});
    return std::abs(a - b) / denom;
}

inline double eval(const ScalarBuilder& build, const std::vector<Array>& leaf_values) {
    std::vector<ad::Var> leaves;
    leaves.reserve(leaf_values.size());
    for (const auto& v : leaf_values) leaves.push_back(ad::constant(v));
    return build(leaves).value().data[0];
}

// Compares reverse-mode gradients against central differences for every
// element of every leaf.
inline CheckResult check(const ScalarBuilder& build, const std::vector<Array>& leaf_values, double h = 1e-5) {
    std::vector<ad::Var> leaves;
    leaves.reserve(leaf_values.size());
    for (const auto& v : leaf_values) leaves.push_back(ad::parameter(v));
    ad::Var root = build(leaves);
    ad::backward(root);

    CheckResult res;
    std::vector<Array> work = leaf_values;
    for (size_t li = 0; li < work.size(); ++li) {
        for (size_t i = 0; i < work[li].numel(); ++i) {
            const double orig = work[li].data[i];
            work[li].data[i] = orig + h;
            const double fp = eval(build, work);
            work[li].data[i] = orig - h;
            const double fm = eval(build, work);
            work[li].data[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = leaves[li].grad().data[i];
            res.max_rel_err = std::max(res.max_rel_err, rel_err(an, fd));
            ++res.checked;
        }
    }
    return res;
}

inline Array random_array(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Array a = Array::zeros(std::move(shape));
    for (double& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

// Keeps values away from a kink at zero so central differences stay valid.
inline Array random_array_away_from_zero(std::vector<int> shape, Rng& rng, double margin = 5e-3) {
    Array a = random_array(std::move(shape), rng);
    for (double& v : a.data)
        if (std::abs(v) < margin) v += (v >= 0.0 ? 2.0 : -2.0) * margin;
    return a;
}

struct OpCase {
    std::string name;
    // Produces leaf values and the builder for one seed.
    std::function<void(uint64_t seed, std::vector<Array>& leaves, ScalarBuilder& build)> make;
};

// Weighted-sum readout turns any op output into a scalar with non-uniform
// output gradients.
inline ad::Var readout(const ad::Var& v, uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xC0FFEE));
    Array w = Array::zeros(v.value().shape);
    for (double& x : w.data) x = rng.uniform(-1.0, 1.0);
    return ad::sum(ad::mul(v, ad::constant(w)));
}

// The registered op set, one FD case per op.
std::vector<OpCase> op_cases();

} // namespace gradcheck
