#include "doctest.h"

#include <cmath>

#include "densiclip/autodiff.hpp"
#include "densiclip/errors.hpp"
#include "densiclip/rng.hpp"
#include "support/grad_check.hpp"

using densiclip::Array;
using densiclip::Rng;
namespace ad = densiclip::ad;

TEST_CASE("relu value and gradient at a negative input") {
    ad::Var x = ad::parameter(Array::scalar(-3.0));
    ad::Var y = ad::sum(ad::relu(x));
    CHECK(y.value().data[0] == 0.0);
    ad::backward(y);
    CHECK(x.grad().data[0] == 0.0);
}

TEST_CASE("l2_normalize of a 3-4-5 triangle") {
    ad::Var x = ad::constant(Array({2}, {3.0, 4.0}));
    ad::Var y = ad::l2_normalize(x);
    CHECK(y.value().data[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.value().data[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("cosine similarity of a vector with itself is one") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        Array v = gradcheck::random_array({7}, rng, 0.1, 1.0);
        ad::Var a = ad::constant(v);
        ad::Var b = ad::constant(v);
        CHECK(ad::cosine_similarity(a, b).value().data[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("sum of elementwise square has gradient 2x") {
    ad::Var x = ad::parameter(Array({2}, {1.0, 2.0}));
    ad::Var y = ad::sum(ad::mul(x, x));
    ad::backward(y);
    CHECK(x.grad().data[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad().data[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("fused cross-entropy gradient equals probabilities minus one-hot") {
    Array logits({2, 3}, {0.5, -1.0, 2.0, 0.0, 0.3, -0.7});
    std::vector<int> labels = {2, 0};
    std::vector<double> weights = {1.0, 1.0};
    ad::Var z = ad::parameter(logits);
    ad::Var loss = ad::weighted_softmax_cross_entropy(z, labels, weights);
    ad::backward(loss);
    // independent probability computation
    for (int r = 0; r < 2; ++r) {
        double mx = logits.at(r, 0);
        for (int c = 1; c < 3; ++c) mx = std::max(mx, logits.at(r, c));
        double zsum = 0.0;
        double p[3];
        for (int c = 0; c < 3; ++c) {
            p[c] = std::exp(logits.at(r, c) - mx);
            zsum += p[c];
        }
        for (int c = 0; c < 3; ++c) {
            p[c] /= zsum;
            const double expected = (p[c] - (labels[r] == c ? 1.0 : 0.0)) / 2.0; // mean over batch
            CHECK(z.grad().at(r, c) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward rejects a non-scalar root") {
    ad::Var x = ad::parameter(Array({2}, {1.0, 2.0}));
    ad::Var y = ad::mul(x, x);
    CHECK_THROWS_AS(ad::backward(y), densiclip::data_error);
}

TEST_CASE("backward twice on the same root is an error") {
    ad::Var x = ad::parameter(Array({2}, {1.0, 2.0}));
    ad::Var y = ad::sum(ad::mul(x, x));
    ad::backward(y);
    CHECK_THROWS_AS(ad::backward(y), densiclip::data_error);
}

TEST_CASE("shape mismatches are rejected") {
    ad::Var a = ad::constant(Array::zeros({2, 3}));
    ad::Var b = ad::constant(Array::zeros({3, 2}));
    CHECK_THROWS_AS(ad::add(a, b), densiclip::data_error);
    CHECK_THROWS_AS(ad::mul(a, b), densiclip::data_error);
    CHECK_THROWS_AS(ad::matmul(a, a), densiclip::data_error);
}

TEST_CASE("l2_normalize rejects a zero vector") {
    ad::Var z = ad::constant(Array::zeros({3}));
    CHECK_THROWS_AS(ad::l2_normalize(z), densiclip::numerical_error);
}

TEST_CASE("non-finite results are reported") {
    ad::Var x = ad::constant(Array({2}, {-1.0, 2.0}));
    CHECK_THROWS_AS(ad::log(x), densiclip::numerical_error);
}

TEST_CASE("every registered op passes finite-difference checks over 20 seeds") {
    for (const auto& op : gradcheck::op_cases()) {
        CAPTURE(op.name);
        double worst = 0.0;
        for (uint64_t seed = 1; seed <= 20; ++seed) {
            std::vector<Array> leaves;
            gradcheck::ScalarBuilder build;
            op.make(seed, leaves, build);
            const auto res = gradcheck::check(build, leaves);
            worst = std::max(worst, res.max_rel_err);
        }
        CHECK_MESSAGE(worst < 1e-4, op.name, " max rel err ", worst);
    }
}

TEST_CASE("identical inputs produce bit-identical values and gradients") {
    auto run = [](std::vector<double>& value_out, std::vector<double>& grad_out) {
        Rng rng(777);
        Array xv = gradcheck::random_array({2, 2, 8, 8}, rng);
        Array wv = gradcheck::random_array({3, 2, 3, 3}, rng);
        Array bv = gradcheck::random_array({3}, rng);
        ad::Var x = ad::constant(xv);
        ad::Var w = ad::parameter(wv);
        ad::Var b = ad::parameter(bv);
        ad::Var y = ad::global_avg_pool(ad::max_pool2d(ad::relu(ad::conv2d(x, w, b, 1, 1)), 2, 2));
        ad::Var loss = ad::mean(ad::mul(y, y));
        ad::backward(loss);
        value_out = loss.value().data;
        grad_out = w.grad().data;
    };
    std::vector<double> v1, g1, v2, g2;
    run(v1, g1);
    run(v2, g2);
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("randomly composed 5-op chains match finite differences") {
    // pool of smooth shape-preserving transforms on a [2,3] matrix
    using Step = std::function<ad::Var(const ad::Var&, Rng&)>;
    std::vector<Step> pool = {
        [](const ad::Var& v, Rng&) { return ad::exp(ad::scale(v, 0.3)); },
        [](const ad::Var& v, Rng&) { return ad::softmax(v); },
        [](const ad::Var& v, Rng&) { return ad::log(ad::add(ad::softmax(v), ad::constant(Array::full({2, 3}, 0.1)))); },
        [](const ad::Var& v, Rng& r) {
            return ad::mul(v, ad::constant(gradcheck::random_array({2, 3}, r, 0.5, 1.5)));
        },
        [](const ad::Var& v, Rng& r) { return ad::add(v, ad::constant(gradcheck::random_array({2, 3}, r))); },
        [](const ad::Var& v, Rng&) { return ad::scale(v, 0.7); },
        [](const ad::Var& v, Rng&) { return ad::l2_normalize(v); },
    };
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng pick(Rng::mix(seed, 5));
        std::vector<size_t> chain(5);
        for (auto& c : chain) c = static_cast<size_t>(pick.below(pool.size()));
        auto build = [&pool, &chain, seed](const std::vector<ad::Var>& leaves) {
            Rng r(Rng::mix(seed, 99));
            ad::Var v = leaves[0];
            for (size_t c : chain) v = pool[c](v, r);
            return ad::mean(v);
        };
        Rng rng(seed);
        std::vector<Array> leaves = {gradcheck::random_array({2, 3}, rng, -0.8, 0.8)};
        const auto res = gradcheck::check(build, leaves);
        CHECK_MESSAGE(res.max_rel_err < 1e-4, "chain seed ", seed, " max rel err ", res.max_rel_err);
    }
}
