#include "biasaudit/embed.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "biasaudit/errors.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::embed {

namespace {

void check_matrix_finite(const std::vector<std::vector<double>>& X) {
    for (const auto& row : X)
        for (double v : row)
            if (!std::isfinite(v)) throw NumericError("non-finite value in input matrix");
}

void check_rect(const std::vector<std::vector<double>>& X) {
    if (X.empty()) throw ShapeError("input matrix is empty");
    const std::size_t d = X[0].size();
    if (d == 0) throw ShapeError("input matrix has zero columns");
    for (const auto& row : X)
        if (row.size() != d) throw ShapeError("input matrix rows have unequal lengths");
}

// Row entropy (nats) of the Gaussian kernel at inverse bandwidth beta,
// plus the unnormalized weights. Distances are shifted by the row minimum
// before exponentiation; the shift cancels under normalization.
double row_entropy(const double* drow, int n, int self, double beta, std::vector<double>& w) {
    double dmin = 0.0;
    bool first = true;
    for (int j = 0; j < n; ++j) {
        if (j == self) continue;
        if (first || drow[j] < dmin) {
            dmin = drow[j];
            first = false;
        }
    }
    double sum = 0.0;
    double dot = 0.0; // sum of w_j * (d_j - dmin)
    for (int j = 0; j < n; ++j) {
        if (j == self) {
            w[static_cast<std::size_t>(j)] = 0.0;
            continue;
        }
        const double shifted = drow[j] - dmin;
        const double wj = std::exp(-beta * shifted);
        w[static_cast<std::size_t>(j)] = wj;
        sum += wj;
        dot += wj * shifted;
    }
    return std::log(sum) + beta * dot / sum;
}

} // namespace

std::vector<double> pairwise_sq_dists(const std::vector<std::vector<double>>& X) {
    check_rect(X);
    const int n = static_cast<int>(X.size());
    if (n < 2) throw ShapeError("pairwise_sq_dists needs at least 2 rows");
    check_matrix_finite(X);

    const std::size_t d = X[0].size();
    std::vector<double> D(static_cast<std::size_t>(n) * n, 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            const double* xi = X[static_cast<std::size_t>(i)].data();
            const double* xj = X[static_cast<std::size_t>(j)].data();
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = xi[k] - xj[k];
                acc += diff * diff;
            }
            D[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    // Mirror the upper triangle (written fully before this point).
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j)
            D[static_cast<std::size_t>(i) * n + j] = D[static_cast<std::size_t>(j) * n + i];
    return D;
}

std::vector<double> conditional_affinities(const std::vector<double>& D, int n,
                                           double perplexity) {
    if (n < 2 || D.size() != static_cast<std::size_t>(n) * n)
        throw ShapeError("conditional_affinities: D must be n x n with n >= 2");
    if (!(perplexity > 1.0) || !(perplexity < n))
        throw ParamError("perplexity must satisfy 1 < perplexity < n");

    const double target = std::log(perplexity); // entropy target in nats
    const double rel_tol = 1e-4;
    std::vector<double> P(static_cast<std::size_t>(n) * n, 0.0);
    std::string failure; // first row that failed, reported after the loop

#pragma omp parallel
    {
        std::vector<double> w(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) {
            const double* drow = &D[static_cast<std::size_t>(i) * n];
            double beta = 1.0;
            double lo = 0.0, hi = 0.0;
            bool have_lo = false, have_hi = false;

            // Entropy decreases in beta. Expand geometrically until the
            // target is bracketed.
            double h = row_entropy(drow, n, i, beta, w);
            for (int step = 0; step < 64 && !(have_lo && have_hi); ++step) {
                if (h > target) {
                    lo = beta;
                    have_lo = true;
                    if (!have_hi) beta *= 2.0;
                } else {
                    hi = beta;
                    have_hi = true;
                    if (!have_lo) beta *= 0.5;
                }
                if (!(have_lo && have_hi)) h = row_entropy(drow, n, i, beta, w);
            }
            bool ok = have_lo && have_hi;
            if (ok) {
                // Bisect until the bracket is exhausted; the 1e-4 relative
                // guarantee is then met with orders of magnitude to spare.
                beta = 0.5 * (lo + hi);
                h = row_entropy(drow, n, i, beta, w);
                for (int iter = 0; iter < 200 && hi - lo > 1e-15 * hi; ++iter) {
                    if (h > target) lo = beta;
                    else hi = beta;
                    beta = 0.5 * (lo + hi);
                    h = row_entropy(drow, n, i, beta, w);
                }
                // exp(entropy in nats) is the row's effective perplexity.
                ok = std::abs(std::exp(h) - perplexity) <= rel_tol * perplexity;
            }
            if (!ok) {
#pragma omp critical
                if (failure.empty())
                    failure = "affinity calibration failed for row " + std::to_string(i);
                continue;
            }
            double sum = 0.0;
            for (int j = 0; j < n; ++j) sum += w[static_cast<std::size_t>(j)];
            for (int j = 0; j < n; ++j)
                P[static_cast<std::size_t>(i) * n + j] = w[static_cast<std::size_t>(j)] / sum;
        }
    }
    if (!failure.empty()) throw NumericError(failure);
    return P;
}

std::vector<double> calibrate_affinities(const std::vector<double>& D, int n, double perplexity) {
    const std::vector<double> C = conditional_affinities(D, n, perplexity);
    std::vector<double> P(static_cast<std::size_t>(n) * n);
    const double scale = 1.0 / (2.0 * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            P[static_cast<std::size_t>(i) * n + j] =
                (C[static_cast<std::size_t>(i) * n + j] + C[static_cast<std::size_t>(j) * n + i]) *
                scale;
    return P;
}

double kl_divergence(const std::vector<double>& P, const std::vector<double>& Q) {
    if (P.size() != Q.size()) throw ShapeError("kl_divergence: shape mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double p = P[i];
        if (p <= 0.0) continue;
        kl += p * std::log(p / std::max(Q[i], 1e-12));
    }
    return kl;
}

double tsne_objective(const std::vector<double>& P, const std::vector<std::array<double, 2>>& Y,
                      std::vector<std::array<double, 2>>* grad) {
    const int n = static_cast<int>(Y.size());
    if (P.size() != static_cast<std::size_t>(n) * n)
        throw ShapeError("tsne_objective: P must be n x n");

    // Student-t weights w_ij = 1 / (1 + ||y_i - y_j||^2).
    std::vector<double> W(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> row_sums(static_cast<std::size_t>(n), 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double rs = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = Y[static_cast<std::size_t>(i)][0] - Y[static_cast<std::size_t>(j)][0];
            const double dy = Y[static_cast<std::size_t>(i)][1] - Y[static_cast<std::size_t>(j)][1];
            const double w = 1.0 / (1.0 + dx * dx + dy * dy);
            W[static_cast<std::size_t>(i) * n + j] = w;
            rs += w;
        }
        row_sums[static_cast<std::size_t>(i)] = rs;
    }
    // Serial reduction in index order keeps the total thread-invariant.
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) wsum += row_sums[static_cast<std::size_t>(i)];

    if (grad) {
        grad->assign(static_cast<std::size_t>(n), {0.0, 0.0});
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const double w = W[static_cast<std::size_t>(i) * n + j];
                const double q = w / wsum;
                const double c = 4.0 * (P[static_cast<std::size_t>(i) * n + j] - q) * w;
                gx += c * (Y[static_cast<std::size_t>(i)][0] - Y[static_cast<std::size_t>(j)][0]);
                gy += c * (Y[static_cast<std::size_t>(i)][1] - Y[static_cast<std::size_t>(j)][1]);
            }
            (*grad)[static_cast<std::size_t>(i)] = {gx, gy};
        }
    }

    double kl = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double p = P[static_cast<std::size_t>(i) * n + j];
            if (p <= 0.0) continue;
            const double q = std::max(W[static_cast<std::size_t>(i) * n + j] / wsum, 1e-12);
            kl += p * std::log(p / q);
        }
    }
    return kl;
}

Embedding tsne(const std::vector<std::vector<double>>& X, const TsneParams& params,
               std::uint64_t seed) {
    check_rect(X);
    const int n = static_cast<int>(X.size());
    if (n < 5) throw ShapeError("tsne needs at least 5 points");

    const std::vector<std::vector<double>>* input = &X;
    std::vector<std::vector<double>> reduced;
    if (params.pca_reduce && static_cast<int>(X[0].size()) > params.pca_dims) {
        reduced = pca_project(X, params.pca_dims);
        input = &reduced;
    }

    const std::vector<double> D = pairwise_sq_dists(*input);
    const std::vector<double> P = calibrate_affinities(D, n, params.perplexity);

    Embedding emb;
    emb.seed = seed;
    emb.params = params;
    emb.points.assign(static_cast<std::size_t>(n), {0.0, 0.0});

    Rng rng(seed);
    for (auto& p : emb.points) {
        p[0] = rng.next_gaussian() * params.init_scale;
        p[1] = rng.next_gaussian() * params.init_scale;
    }

    std::vector<std::array<double, 2>> vel(static_cast<std::size_t>(n), {0.0, 0.0});
    std::vector<std::array<double, 2>> grad;
    std::vector<double> Pex(P.size());

    for (int iter = 0; iter < params.iterations; ++iter) {
        const bool exaggerated = iter < params.early_exaggeration_iters;
        const std::vector<double>* Puse = &P;
        if (exaggerated) {
            for (std::size_t k = 0; k < P.size(); ++k)
                Pex[k] = P[k] * params.early_exaggeration_factor;
            Puse = &Pex;
        }
        tsne_objective(*Puse, emb.points, &grad);

        const double momentum = iter < params.momentum_switch_iter ? params.momentum_initial
                                                                   : params.momentum_final;
        double cx = 0.0, cy = 0.0;
        for (int i = 0; i < n; ++i) {
            auto& g = grad[static_cast<std::size_t>(i)];
            if (!std::isfinite(g[0]) || !std::isfinite(g[1]))
                throw NumericError("non-finite t-SNE gradient at iteration " +
                                   std::to_string(iter));
            auto& v = vel[static_cast<std::size_t>(i)];
            auto& p = emb.points[static_cast<std::size_t>(i)];
            v[0] = momentum * v[0] - params.learning_rate * g[0];
            v[1] = momentum * v[1] - params.learning_rate * g[1];
            p[0] += v[0];
            p[1] += v[1];
            cx += p[0];
            cy += p[1];
        }
        cx /= n;
        cy /= n;
        for (auto& p : emb.points) {
            p[0] -= cx;
            p[1] -= cy;
        }
        if ((iter + 1) % params.trace_stride == 0)
            emb.kl_trace.push_back(tsne_objective(P, emb.points, nullptr));
    }
    return emb;
}

std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& X, int dims) {
    check_rect(X);
    check_matrix_finite(X);
    const int n = static_cast<int>(X.size());
    const int d = static_cast<int>(X[0].size());
    if (dims < 1) throw ParamError("pca_project: dims must be >= 1");
    dims = std::min(dims, std::min(n, d));

    // Center columns, then work with the n x n Gram matrix of the
    // centered rows; scores are U * sqrt(Lambda).
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (const auto& row : X)
        for (int k = 0; k < d; ++k) mean[static_cast<std::size_t>(k)] += row[static_cast<std::size_t>(k)];
    for (double& m : mean) m /= n;

    std::vector<std::vector<double>> C(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(d)));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k)
            C[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
                X[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] -
                mean[static_cast<std::size_t>(k)];

    std::vector<double> G(static_cast<std::size_t>(n) * n, 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
                acc += C[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
                       C[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            G[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j)
            G[static_cast<std::size_t>(i) * n + j] = G[static_cast<std::size_t>(j) * n + i];

    // Cyclic Jacobi eigendecomposition of the symmetric Gram matrix.
    std::vector<double> V(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[static_cast<std::size_t>(i) * n + i] = 1.0;
    auto off_norm = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double g = G[static_cast<std::size_t>(i) * n + j];
                s += g * g;
            }
        return s;
    };
    double base = 0.0;
    for (double g : G) base += g * g;
    const double stop = std::max(base, 1.0) * 1e-24;
    for (int sweep = 0; sweep < 100 && off_norm() > stop; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double gpq = G[static_cast<std::size_t>(p) * n + q];
                if (gpq == 0.0) continue;
                const double gpp = G[static_cast<std::size_t>(p) * n + p];
                const double gqq = G[static_cast<std::size_t>(q) * n + q];
                const double theta = (gqq - gpp) / (2.0 * gpq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double cth = 1.0 / std::sqrt(t * t + 1.0);
                const double sth = t * cth;
                for (int k = 0; k < n; ++k) {
                    const double gkp = G[static_cast<std::size_t>(k) * n + p];
                    const double gkq = G[static_cast<std::size_t>(k) * n + q];
                    G[static_cast<std::size_t>(k) * n + p] = cth * gkp - sth * gkq;
                    G[static_cast<std::size_t>(k) * n + q] = sth * gkp + cth * gkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double gpk = G[static_cast<std::size_t>(p) * n + k];
                    const double gqk = G[static_cast<std::size_t>(q) * n + k];
                    G[static_cast<std::size_t>(p) * n + k] = cth * gpk - sth * gqk;
                    G[static_cast<std::size_t>(q) * n + k] = sth * gpk + cth * gqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = V[static_cast<std::size_t>(k) * n + p];
                    const double vkq = V[static_cast<std::size_t>(k) * n + q];
                    V[static_cast<std::size_t>(k) * n + p] = cth * vkp - sth * vkq;
                    V[static_cast<std::size_t>(k) * n + q] = sth * vkp + cth * vkq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return G[static_cast<std::size_t>(a) * n + a] > G[static_cast<std::size_t>(b) * n + b];
    });

    std::vector<std::vector<double>> out(static_cast<std::size_t>(n),
                                         std::vector<double>(static_cast<std::size_t>(dims)));
    for (int c = 0; c < dims; ++c) {
        const int e = order[static_cast<std::size_t>(c)];
        const double lambda = std::max(G[static_cast<std::size_t>(e) * n + e], 0.0);
        const double s = std::sqrt(lambda);
        // Deterministic sign: largest-magnitude loading is positive.
        int arg = 0;
        double best = 0.0;
        for (int i = 0; i < n; ++i) {
            const double a = std::abs(V[static_cast<std::size_t>(i) * n + e]);
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        const double sign = V[static_cast<std::size_t>(arg) * n + e] >= 0.0 ? 1.0 : -1.0;
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                sign * V[static_cast<std::size_t>(i) * n + e] * s;
    }
    return out;
}

namespace serial {

std::vector<double> pairwise_sq_dists(const std::vector<std::vector<double>>& X) {
    check_rect(X);
    const int n = static_cast<int>(X.size());
    if (n < 2) throw ShapeError("pairwise_sq_dists needs at least 2 rows");
    check_matrix_finite(X);

    const std::size_t d = X[0].size();
    std::vector<double> D(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = X[static_cast<std::size_t>(i)][k] - X[static_cast<std::size_t>(j)][k];
                acc += diff * diff;
            }
            D[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    return D;
}

} // namespace serial

} // namespace biasaudit::embed
