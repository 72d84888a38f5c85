#pragma once

// Confusion-matrix metrics and AUROC. Binary reports use the four
// classical formulas with class 1 as positive; multi-class reports
// macro-average one-vs-rest. AUROC is the Mann-Whitney statistic
// P(score+ > score-) + 0.5 * P(tie), computed from average ranks.

#include <vector>

namespace biasaudit::metrics {

struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts; // row-major, rows = true, cols = predicted

    explicit ConfusionMatrix(int classes);
    long long& at(int true_class, int predicted_class);
    long long at(int true_class, int predicted_class) const;
    long long total() const;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // A zero precision/recall denominator contributes 0 and is flagged.
    bool degenerate = false;
};

enum class Averaging { Binary, Macro };

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    Averaging averaging = Averaging::Binary;
    std::vector<ClassMetrics> per_class; // one-vs-rest; binary reports it too
    bool has_degenerate = false;
};

ConfusionMatrix confusion(const std::vector<int>& true_labels,
                          const std::vector<int>& predicted_labels, int k);

MetricsReport summarize(const ConfusionMatrix& cm);

// labels are 0/1 with 1 positive; throws when only one class is present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Macro one-vs-rest over classes that have both positives and negatives.
double auroc_macro(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels);

} // namespace biasaudit::metrics
