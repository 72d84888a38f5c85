#pragma once

// Binary soft-margin SVM trained by SMO on 2-D features. Working pairs
// are the first-order maximal violating pair; a seeded rotation supplies
// the fallback second choice when the best pair cannot move. Pair updates
// always process the lower index first, and argmax/argmin scans break
// ties toward the first index, so negating every label negates every
// decision value (bias included) bit-exactly.

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

namespace biasaudit::svm {

enum class KernelType { Linear, Rbf };

struct Kernel {
    KernelType type = KernelType::Rbf;
    double gamma = 0.0; // <= 0 requests the default 1/(2*feature variance)
};

struct SvmModel {
    std::vector<std::array<double, 2>> support_vectors;
    std::vector<double> dual_coefs; // alpha_i * y_i, matching support_vectors
    double bias = 0.0;
    Kernel kernel;
    double C = 1.0;
    double tol = 1e-3;
};

struct TrainOptions {
    Kernel kernel;
    double C = 1.0;
    double tol = 1e-3;
    int max_passes = 200; // iteration cap is max_passes * n pair updates
    std::uint64_t seed = 0;
};

struct Prediction {
    int label = 1; // exact-zero decisions report +1
    double decision = 0.0;
};

// Pooled population variance of all feature entries -> 1/(2*var);
// degenerate zero-variance input falls back to 1.
double default_rbf_gamma(const std::vector<std::array<double, 2>>& X);

SvmModel train_svm(const std::vector<std::array<double, 2>>& X, const std::vector<int>& y,
                   const TrainOptions& opts);

Prediction predict(const SvmModel& model, const std::array<double, 2>& x);

nlohmann::json model_to_json(const SvmModel& model);
SvmModel model_from_json(const nlohmann::json& j);

} // namespace biasaudit::svm
