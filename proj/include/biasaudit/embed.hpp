#pragma once

// Exact t-SNE for small corpora (hundreds of points): full O(n^2)
// affinities, per-row bandwidth calibration, plain gradient descent with
// early exaggeration and a momentum switch. Barnes-Hut is deliberately
// absent; probe sizes stay near a thousand points and the exact form is
// what the oracle tests check against.
//
// Square matrices (distances, affinities) are flat row-major vectors of
// size n*n indexed as [i*n + j].

#include <array>
#include <cstdint>
#include <vector>

namespace biasaudit::embed {

struct TsneParams {
    double perplexity = 30.0;
    double learning_rate = 200.0;
    int iterations = 1000;
    double early_exaggeration_factor = 12.0;
    int early_exaggeration_iters = 250;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    int momentum_switch_iter = 250;
    double init_scale = 1e-4; // stddev of the seeded Gaussian init
    int trace_stride = 10;    // record KL every this many iterations
    bool pca_reduce = false;  // optional pre-reduction, off by default
    int pca_dims = 50;
};

struct Embedding {
    std::vector<std::array<double, 2>> points;
    // KL(P||Q) with the un-exaggerated P, recorded after every
    // trace_stride-th iteration.
    std::vector<double> kl_trace;
    std::uint64_t seed = 0;
    TsneParams params;
};

// D[i][j] = squared Euclidean distance between rows i and j.
std::vector<double> pairwise_sq_dists(const std::vector<std::vector<double>>& X);

// Row-stochastic conditional Gaussian affinities: each row's bandwidth is
// tuned so 2^(row entropy) equals the perplexity within relative 1e-4.
// Exposed separately so the calibration invariant is testable per row.
std::vector<double> conditional_affinities(const std::vector<double>& D, int n, double perplexity);

// Symmetrized joint affinities P = (P_cond + P_cond^T) / (2n); sums to 1.
std::vector<double> calibrate_affinities(const std::vector<double>& D, int n, double perplexity);

// KL(P||Q) with the objective's conventions: 0*log(0/q) = 0 and q floored
// at 1e-12. Natural log.
double kl_divergence(const std::vector<double>& P, const std::vector<double>& Q);

// Objective value and (optionally) its gradient at map positions Y for
// affinities P: KL(P||Q(Y)) with the Student-t kernel. The descent loop
// and the finite-difference gradient tests share this code path.
double tsne_objective(const std::vector<double>& P, const std::vector<std::array<double, 2>>& Y,
                      std::vector<std::array<double, 2>>* grad);

Embedding tsne(const std::vector<std::vector<double>>& X, const TsneParams& params,
               std::uint64_t seed);

// Gram-matrix PCA (Jacobi eigendecomposition): rows of the result are the
// top-`dims` principal-component scores. Deterministic sign convention.
std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& X, int dims);

namespace serial {
// Reference distance computation: direct evaluation of every (i,j) cell,
// no triangle mirroring, no threading.
std::vector<double> pairwise_sq_dists(const std::vector<std::vector<double>>& X);
} // namespace serial

} // namespace biasaudit::embed
