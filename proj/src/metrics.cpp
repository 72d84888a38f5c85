#include "biasaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biasaudit/errors.hpp"

namespace biasaudit::metrics {

ConfusionMatrix::ConfusionMatrix(int classes) : k(classes) {
    if (classes < 2) throw ParamError("confusion matrix needs at least 2 classes");
    counts.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
}

long long& ConfusionMatrix::at(int true_class, int predicted_class) {
    return counts[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(k) +
                  static_cast<std::size_t>(predicted_class)];
}

long long ConfusionMatrix::at(int true_class, int predicted_class) const {
    return counts[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(k) +
                  static_cast<std::size_t>(predicted_class)];
}

long long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0LL);
}

ConfusionMatrix confusion(const std::vector<int>& true_labels,
                          const std::vector<int>& predicted_labels, int k) {
    if (true_labels.size() != predicted_labels.size())
        throw ShapeError("confusion: label lists differ in length");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        const int t = true_labels[i];
        const int p = predicted_labels[i];
        if (t < 0 || t >= k || p < 0 || p >= k)
            throw ParamError("confusion: label outside [0, K)");
        ++cm.at(t, p);
    }
    return cm;
}

namespace {

ClassMetrics one_vs_rest(const ConfusionMatrix& cm, int cls) {
    long long tp = cm.at(cls, cls);
    long long fp = 0, fn = 0;
    for (int o = 0; o < cm.k; ++o) {
        if (o == cls) continue;
        fp += cm.at(o, cls);
        fn += cm.at(cls, o);
    }
    ClassMetrics m;
    if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else m.degenerate = true;
    if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else m.degenerate = true;
    if (m.precision + m.recall > 0.0)
        m.f1 = 2.0 * (m.precision * m.recall) / (m.precision + m.recall);
    return m;
}

} // namespace

MetricsReport summarize(const ConfusionMatrix& cm) {
    const long long total = cm.total();
    if (total <= 0) throw ParamError("summarize: empty confusion matrix");

    MetricsReport r;
    long long diag = 0;
    for (int c = 0; c < cm.k; ++c) diag += cm.at(c, c);

    for (int c = 0; c < cm.k; ++c) {
        r.per_class.push_back(one_vs_rest(cm, c));
        r.has_degenerate = r.has_degenerate || r.per_class.back().degenerate;
    }

    if (cm.k == 2) {
        // The four classical formulas with class 1 as positive.
        const auto tp = static_cast<double>(cm.at(1, 1));
        const auto tn = static_cast<double>(cm.at(0, 0));
        const auto fp = static_cast<double>(cm.at(0, 1));
        const auto fn = static_cast<double>(cm.at(1, 0));
        r.averaging = Averaging::Binary;
        r.accuracy = (tp + tn) / (tp + tn + fp + fn);
        r.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        r.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        r.f1 = r.precision + r.recall > 0.0
                   ? 2.0 * (r.precision * r.recall) / (r.precision + r.recall)
                   : 0.0;
    } else {
        r.averaging = Averaging::Macro;
        r.accuracy = static_cast<double>(diag) / static_cast<double>(total);
        for (const ClassMetrics& m : r.per_class) {
            r.precision += m.precision;
            r.recall += m.recall;
            r.f1 += m.f1;
        }
        r.precision /= cm.k;
        r.recall /= cm.k;
        r.f1 /= cm.k;
    }
    return r;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auroc: scores/labels length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int lab : labels) {
        if (lab != 0 && lab != 1) throw ParamError("auroc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(lab);
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw ValidationError("auroc undefined: only one class present");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average 1-based ranks within tie blocks; rank sums stay exact
    // half-integers so the result matches pair counting bit-for-bit.
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[idx[t]] == 1) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    const double u = pos_rank_sum -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auroc_macro(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size()) throw ShapeError("auroc_macro: sizes differ");
    if (probs.empty()) throw ParamError("auroc_macro: empty input");
    const std::size_t k = probs[0].size();
    double sum = 0.0;
    int defined = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> scores(probs.size());
        std::vector<int> binary(probs.size());
        std::size_t pos = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            scores[i] = probs[i][c];
            binary[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
            pos += static_cast<std::size_t>(binary[i]);
        }
        if (pos == 0 || pos == probs.size()) continue; // one-vs-rest undefined for this class
        sum += auroc(scores, binary);
        ++defined;
    }
    if (defined == 0) throw ValidationError("auroc_macro undefined: no class has both outcomes");
    return sum / defined;
}

} // namespace biasaudit::metrics
