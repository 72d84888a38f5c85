#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "biasaudit/errors.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/rng.hpp"
#include "oracles.hpp"

using namespace biasaudit;
using metrics::ConfusionMatrix;

TEST_CASE("confusion counts land in [true, predicted] cells") {
    const std::vector<int> truth{1, 1, 0, 0};
    const std::vector<int> pred{1, 0, 0, 1};
    const ConfusionMatrix cm = metrics::confusion(truth, pred, 2);
    CHECK(cm.at(1, 1) == 1); // true positive
    CHECK(cm.at(1, 0) == 1); // false negative
    CHECK(cm.at(0, 0) == 1); // true negative
    CHECK(cm.at(0, 1) == 1); // false positive
    CHECK(cm.total() == 4);
}

TEST_CASE("perfect predictions fill only the diagonal") {
    const std::vector<int> labels{0, 1, 2, 2, 1, 0, 2};
    const ConfusionMatrix cm = metrics::confusion(labels, labels, 3);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p)
            CHECK(cm.at(t, p) == (t == p ? (t == 2 ? 3 : 2) : 0));
}

TEST_CASE("empty label lists produce the zero matrix") {
    const ConfusionMatrix cm = metrics::confusion({}, {}, 3);
    CHECK(cm.total() == 0);
    for (long long c : cm.counts) CHECK(c == 0);
}

TEST_CASE("confusion validates lengths, label range and class count") {
    CHECK_THROWS_AS(metrics::confusion({0, 1}, {0}, 2), ShapeError);
    CHECK_THROWS_AS(metrics::confusion({0, 2}, {0, 0}, 2), ParamError);
    CHECK_THROWS_AS(metrics::confusion({0, -1}, {0, 0}, 2), ParamError);
    CHECK_THROWS_AS(ConfusionMatrix(1), ParamError);
}

TEST_CASE("summarize: perfect diagonal gives all ones") {
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    const auto r = metrics::summarize(metrics::confusion(labels, labels, 3));
    CHECK(r.accuracy == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.averaging == metrics::Averaging::Macro);
    CHECK_FALSE(r.has_degenerate);
}

TEST_CASE("summarize: the balanced half-wrong binary case scores 0.5 everywhere") {
    const auto r = metrics::summarize(metrics::confusion({1, 1, 0, 0}, {1, 0, 0, 1}, 2));
    CHECK(r.accuracy == 0.5);
    CHECK(r.precision == 0.5);
    CHECK(r.recall == 0.5);
    CHECK(r.f1 == 0.5);
    CHECK(r.averaging == metrics::Averaging::Binary);
}

TEST_CASE("summarize: everything wrong scores zero") {
    std::vector<int> truth, pred;
    for (int i = 0; i < 10; ++i) {
        truth.push_back(i % 2);
        pred.push_back(1 - i % 2);
    }
    const auto r = metrics::summarize(metrics::confusion(truth, pred, 2));
    CHECK(r.accuracy == 0.0);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
}

TEST_CASE("summarize matches the classical binary formulas on random matrices") {
    Rng rng(701);
    for (int trial = 0; trial < 20; ++trial) {
        // Keep every count positive so the formulas stay well defined.
        const long long tp = 1 + static_cast<long long>(rng.next_u64() % 40);
        const long long fp = 1 + static_cast<long long>(rng.next_u64() % 40);
        const long long fn = 1 + static_cast<long long>(rng.next_u64() % 40);
        const long long tn = 1 + static_cast<long long>(rng.next_u64() % 40);
        ConfusionMatrix cm(2);
        cm.at(1, 1) = tp;
        cm.at(0, 1) = fp;
        cm.at(1, 0) = fn;
        cm.at(0, 0) = tn;
        const auto r = metrics::summarize(cm);
        const auto want = oracle::binary_formulas(tp, fp, fn, tn);
        CHECK(r.accuracy == doctest::Approx(want.accuracy).epsilon(1e-15));
        CHECK(r.precision == doctest::Approx(want.precision).epsilon(1e-15));
        CHECK(r.recall == doctest::Approx(want.recall).epsilon(1e-15));
        CHECK(r.f1 == doctest::Approx(want.f1).epsilon(1e-15));
    }
}

TEST_CASE("macro metrics are the unweighted per-class mean") {
    const std::vector<int> truth{0, 0, 0, 1, 1, 2, 2, 2, 2};
    const std::vector<int> pred{0, 1, 2, 1, 0, 2, 2, 0, 1};
    const auto r = metrics::summarize(metrics::confusion(truth, pred, 3));
    REQUIRE(r.per_class.size() == 3);
    double p = 0.0, rec = 0.0, f1 = 0.0;
    for (const auto& c : r.per_class) {
        p += c.precision;
        rec += c.recall;
        f1 += c.f1;
    }
    CHECK(r.precision == doctest::Approx(p / 3.0).epsilon(1e-15));
    CHECK(r.recall == doctest::Approx(rec / 3.0).epsilon(1e-15));
    CHECK(r.f1 == doctest::Approx(f1 / 3.0).epsilon(1e-15));
    CHECK(r.accuracy == doctest::Approx(4.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("a class never predicted nor present is flagged and contributes zero") {
    // Class 2 has no true samples and no predictions.
    const std::vector<int> truth{0, 0, 1, 1};
    const std::vector<int> pred{0, 1, 1, 0};
    const auto r = metrics::summarize(metrics::confusion(truth, pred, 3));
    CHECK(r.has_degenerate);
    CHECK(r.per_class[2].degenerate);
    CHECK(r.per_class[2].precision == 0.0);
    CHECK(r.per_class[2].recall == 0.0);
    CHECK(r.per_class[2].f1 == 0.0);
    CHECK_FALSE(r.per_class[0].degenerate);
}

TEST_CASE("summarize rejects an empty matrix") {
    CHECK_THROWS_AS(metrics::summarize(ConfusionMatrix(2)), ParamError);
}

// ---------------------------------------------------------------------------
// AUROC

TEST_CASE("auroc endpoints: perfect, reversed, and uninformative scores") {
    const std::vector<int> labels{0, 0, 1, 1};
    CHECK(metrics::auroc({0.1, 0.2, 0.8, 0.9}, labels) == 1.0);
    CHECK(metrics::auroc({0.9, 0.8, 0.2, 0.1}, labels) == 0.0);
    CHECK(metrics::auroc({0.5, 0.5, 0.5, 0.5}, labels) == 0.5);
}

TEST_CASE("ties earn half credit") {
    // Positive 0.4 ties one negative (0.5 credit) and beats 0.1;
    // positive 0.8 beats both: (1 + 0.5 + 2) / 4.
    CHECK(metrics::auroc({0.1, 0.4, 0.4, 0.8}, {0, 0, 1, 1}) == 0.875);
}

TEST_CASE("rank-based auroc equals pair counting bit-for-bit") {
    Rng rng(711);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 50;
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // A coarse score grid forces plenty of exact ties.
            scores[i] = static_cast<double>(rng.next_u64() % 16) / 16.0;
            labels[i] = rng.next_double() < 0.5 ? 1 : 0;
            (labels[i] == 1 ? has_pos : has_neg) = true;
        }
        if (!has_pos) labels[0] = 1;
        if (!has_neg) labels[1] = 0;
        CHECK(metrics::auroc(scores, labels) == oracle::auroc_pairs(scores, labels));
    }
}

TEST_CASE("negating the scores reflects auroc around one half") {
    Rng rng(721);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> scores(30);
        std::vector<int> labels(30);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            scores[i] = static_cast<double>(rng.next_u64() % 12) / 12.0;
            labels[i] = i % 3 == 0 ? 1 : 0;
        }
        std::vector<double> negated(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) negated[i] = -scores[i];
        CHECK(metrics::auroc(scores, labels) + metrics::auroc(negated, labels) == 1.0);
    }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
    Rng rng(731);
    std::vector<double> scores(40);
    std::vector<int> labels(40);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = static_cast<double>(rng.next_u64() % 32) / 32.0;
        labels[i] = rng.next_double() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    std::vector<double> mapped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) mapped[i] = std::exp(scores[i]) + 3.0;
    CHECK(metrics::auroc(scores, labels) == metrics::auroc(mapped, labels));
}

TEST_CASE("auroc validates inputs") {
    CHECK_THROWS_AS(metrics::auroc({0.1, 0.2}, {1}), ShapeError);
    CHECK_THROWS_AS(metrics::auroc({0.1, 0.2}, {1, 2}), ParamError);
    CHECK_THROWS_AS(metrics::auroc({0.1, 0.2}, {1, 1}), ValidationError);
    CHECK_THROWS_AS(metrics::auroc({0.1, 0.2}, {0, 0}), ValidationError);
}

// ---------------------------------------------------------------------------
// macro AUROC

TEST_CASE("auroc_macro averages the defined one-vs-rest curves") {
    Rng rng(741);
    const int n = 36;
    std::vector<std::vector<double>> probs(n, std::vector<double>(3));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = i % 3;
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
            probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                rng.next_double(0.05, 1.0) + (c == labels[i] ? 0.8 : 0.0);
            sum += probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < 3; ++c)
            probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] /= sum;
    }

    double expected = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> scores(n);
        std::vector<int> binary(n);
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] =
                probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            binary[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c ? 1 : 0;
        }
        expected += oracle::auroc_pairs(scores, binary);
    }
    expected /= 3.0;
    CHECK(metrics::auroc_macro(probs, labels) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("auroc_macro skips classes that lack both outcomes") {
    // Three columns but only classes 0 and 1 appear: column 2 is skipped,
    // so the macro average runs over the two defined curves.
    const std::vector<std::vector<double>> probs{
        {0.7, 0.2, 0.1}, {0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.6, 0.1}};
    const std::vector<int> labels{0, 0, 1, 1};
    const double c0 = oracle::auroc_pairs({0.7, 0.6, 0.2, 0.3}, {1, 1, 0, 0});
    const double c1 = oracle::auroc_pairs({0.2, 0.3, 0.7, 0.6}, {0, 0, 1, 1});
    CHECK(metrics::auroc_macro(probs, labels) == doctest::Approx((c0 + c1) / 2.0).epsilon(1e-12));
}

TEST_CASE("auroc_macro validates inputs") {
    CHECK_THROWS_AS(metrics::auroc_macro({}, {}), ParamError);
    CHECK_THROWS_AS(metrics::auroc_macro({{0.5, 0.5}}, {0, 1}), ShapeError);
    CHECK_THROWS_AS(metrics::auroc_macro({{0.5, 0.5}, {0.4, 0.6}}, {0, 0}), ValidationError);
}
