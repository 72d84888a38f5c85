#include "biasaudit/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "biasaudit/errors.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit::svm {

namespace {

double kernel_eval(const Kernel& k, const std::array<double, 2>& u,
                   const std::array<double, 2>& v) {
    if (k.type == KernelType::Linear) return u[0] * v[0] + u[1] * v[1];
    const double dx = u[0] - v[0];
    const double dy = u[1] - v[1];
    return std::exp(-k.gamma * (dx * dx + dy * dy));
}

} // namespace

double default_rbf_gamma(const std::vector<std::array<double, 2>>& X) {
    double mean = 0.0;
    for (const auto& p : X) mean += p[0] + p[1];
    const double cnt = 2.0 * static_cast<double>(X.size());
    mean /= cnt;
    double var = 0.0;
    for (const auto& p : X) {
        var += (p[0] - mean) * (p[0] - mean);
        var += (p[1] - mean) * (p[1] - mean);
    }
    var /= cnt;
    if (var <= 0.0) return 1.0;
    return 1.0 / (2.0 * var);
}

SvmModel train_svm(const std::vector<std::array<double, 2>>& X, const std::vector<int>& y,
                   const TrainOptions& opts) {
    const int n = static_cast<int>(X.size());
    if (n < 2) throw ShapeError("train_svm: need at least 2 samples");
    if (y.size() != X.size()) throw ShapeError("train_svm: X and y sizes differ");
    if (opts.C <= 0.0) throw ParamError("train_svm: C must be > 0");
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
        if (y[static_cast<std::size_t>(i)] == 1) has_pos = true;
        else if (y[static_cast<std::size_t>(i)] == -1) has_neg = true;
        else throw ParamError("train_svm: labels must be -1 or +1");
        if (!std::isfinite(X[static_cast<std::size_t>(i)][0]) ||
            !std::isfinite(X[static_cast<std::size_t>(i)][1]))
            throw NumericError("train_svm: non-finite feature");
    }
    if (!has_pos || !has_neg) throw ValidationError("train_svm: only one class present");

    Kernel kernel = opts.kernel;
    if (kernel.type == KernelType::Rbf && kernel.gamma <= 0.0)
        kernel.gamma = default_rbf_gamma(X);

    // Cache the full kernel matrix; probe sizes stay near
    // a thousand points.
    std::vector<double> K(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const double v = kernel_eval(kernel, X[static_cast<std::size_t>(i)],
                                         X[static_cast<std::size_t>(j)]);
            K[static_cast<std::size_t>(i) * n + j] = v;
            K[static_cast<std::size_t>(j) * n + i] = v;
        }
    auto kij = [&](int i, int j) { return K[static_cast<std::size_t>(i) * n + j]; };

    const double C = opts.C;
    std::vector<double> alpha(static_cast<std::size_t>(n), 0.0);
    // F_i = sum_j alpha_j y_j K_ij - y_i; the optimality gap is
    // max over I_up of -F minus min over I_low of -F.
    std::vector<double> F(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) F[static_cast<std::size_t>(i)] = -y[static_cast<std::size_t>(i)];

    auto in_up = [&](int t) {
        return (y[static_cast<std::size_t>(t)] == 1 && alpha[static_cast<std::size_t>(t)] < C) ||
               (y[static_cast<std::size_t>(t)] == -1 && alpha[static_cast<std::size_t>(t)] > 0.0);
    };
    auto in_low = [&](int t) {
        return (y[static_cast<std::size_t>(t)] == 1 && alpha[static_cast<std::size_t>(t)] > 0.0) ||
               (y[static_cast<std::size_t>(t)] == -1 && alpha[static_cast<std::size_t>(t)] < C);
    };

    // Two-variable update on the canonical (lower-index-first) pair.
    // Returns false when clipping leaves the pair unchanged.
    auto update_pair = [&](int i, int j) {
        if (i > j) std::swap(i, j);
        const auto si = static_cast<std::size_t>(i);
        const auto sj = static_cast<std::size_t>(j);
        const double eta = kij(i, i) + kij(j, j) - 2.0 * kij(i, j);
        const double denom = eta > 1e-12 ? eta : 1e-12;
        const double yj = y[sj];
        double aj_new = alpha[sj] + yj * (F[si] - F[sj]) / denom;
        double L, H;
        if (y[si] != y[sj]) {
            L = std::max(0.0, alpha[sj] - alpha[si]);
            H = std::min(C, C + alpha[sj] - alpha[si]);
        } else {
            L = std::max(0.0, alpha[si] + alpha[sj] - C);
            H = std::min(C, alpha[si] + alpha[sj]);
        }
        aj_new = std::min(H, std::max(L, aj_new));
        // L and H are differences of nearly-equal alphas, so clipping can
        // leave bound-adjacent noise (~1e-16·C) on an alpha that belongs
        // exactly at 0 or C. The strict I_up/I_low tests would then keep
        // such a point in the wrong set and corrupt the bias bracket,
        // while the no-progress guard below rejects the noise-sized move
        // that would clean it up. Snap to the bound before committing.
        const double snap = 1e-12 * C;
        if (aj_new < snap)
            aj_new = 0.0;
        else if (aj_new > C - snap)
            aj_new = C;
        const double dj = aj_new - alpha[sj];
        if (std::abs(dj) < 1e-12) return false;
        double ai_new = alpha[si] - static_cast<double>(y[si]) * yj * dj;
        if (ai_new < snap)
            ai_new = 0.0;
        else if (ai_new > C - snap)
            ai_new = C;
        const double di = ai_new - alpha[si];
        alpha[si] = ai_new;
        alpha[sj] = aj_new;
        const double ti = di * y[si];
        const double tj = dj * yj;
        for (int t = 0; t < n; ++t)
            F[static_cast<std::size_t>(t)] += ti * kij(t, i) + tj * kij(t, j);
        return true;
    };

    Rng rng(opts.seed);
    const long long max_iter = static_cast<long long>(opts.max_passes) * n;
    double m = 0.0, M = 0.0;
    for (long long it = 0; it < max_iter; ++it) {
        // Maximal violating pair; ties break toward the first index.
        int iu = -1, il = -1;
        m = -std::numeric_limits<double>::infinity();
        M = std::numeric_limits<double>::infinity();
        for (int t = 0; t < n; ++t) {
            const double v = -F[static_cast<std::size_t>(t)];
            if (in_up(t) && v > m) {
                m = v;
                iu = t;
            }
            if (in_low(t) && v < M) {
                M = v;
                il = t;
            }
        }
        if (iu < 0 || il < 0 || m - M <= opts.tol) break;

        if (update_pair(iu, il)) continue;

        // Fallback: rotate through alternative partners from a seeded
        // offset. Each candidate t can pair with the up element (t from
        // I_low) or the low element (t from I_up); trying the
        // lexicographically smaller canonical pair first keeps the whole
        // procedure mirror-symmetric under label negation.
        const int start = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        auto pair_key = [](int p, int q) {
            if (p > q) std::swap(p, q);
            return std::pair<int, int>(p, q);
        };
        bool moved = false;
        for (int k = 0; k < n && !moved; ++k) {
            const int t = (start + k) % n;
            const bool with_up = t != iu && in_low(t);
            const bool with_low = t != il && in_up(t);
            if (with_up && with_low) {
                if (pair_key(iu, t) < pair_key(t, il))
                    moved = update_pair(iu, t) || update_pair(t, il);
                else
                    moved = update_pair(t, il) || update_pair(iu, t);
            } else if (with_up) {
                moved = update_pair(iu, t);
            } else if (with_low) {
                moved = update_pair(t, il);
            }
        }
        if (!moved) break; // no direction makes progress: numerically done
    }

    // Recompute the stopping quantities for the bias midpoint.
    {
        m = -std::numeric_limits<double>::infinity();
        M = std::numeric_limits<double>::infinity();
        for (int t = 0; t < n; ++t) {
            const double v = -F[static_cast<std::size_t>(t)];
            if (in_up(t) && v > m) m = v;
            if (in_low(t) && v < M) M = v;
        }
        if (!std::isfinite(m)) m = M;
        if (!std::isfinite(M)) M = m;
    }

    SvmModel model;
    model.kernel = kernel;
    model.C = C;
    model.tol = opts.tol;
    model.bias = (m + M) / 2.0;
    for (int i = 0; i < n; ++i) {
        if (alpha[static_cast<std::size_t>(i)] > 0.0) {
            model.support_vectors.push_back(X[static_cast<std::size_t>(i)]);
            model.dual_coefs.push_back(alpha[static_cast<std::size_t>(i)] *
                                       y[static_cast<std::size_t>(i)]);
        }
    }
    return model;
}

Prediction predict(const SvmModel& model, const std::array<double, 2>& x) {
    double acc = 0.0;
    for (std::size_t k = 0; k < model.support_vectors.size(); ++k)
        acc += model.dual_coefs[k] * kernel_eval(model.kernel, model.support_vectors[k], x);
    Prediction p;
    p.decision = acc + model.bias;
    p.label = p.decision >= 0.0 ? 1 : -1;
    return p;
}

nlohmann::json model_to_json(const SvmModel& model) {
    nlohmann::json j;
    j["kernel"] = model.kernel.type == KernelType::Linear ? "linear" : "rbf";
    if (model.kernel.type == KernelType::Rbf) j["gamma"] = model.kernel.gamma;
    j["C"] = model.C;
    j["tol"] = model.tol;
    j["bias"] = model.bias;
    j["support_vectors"] = nlohmann::json::array();
    for (const auto& sv : model.support_vectors) j["support_vectors"].push_back({sv[0], sv[1]});
    j["dual_coefs"] = model.dual_coefs;
    return j;
}

SvmModel model_from_json(const nlohmann::json& j) {
    SvmModel model;
    const std::string kt = j.at("kernel").get<std::string>();
    if (kt == "linear") model.kernel.type = KernelType::Linear;
    else if (kt == "rbf") {
        model.kernel.type = KernelType::Rbf;
        model.kernel.gamma = j.at("gamma").get<double>();
    } else throw FormatError("unknown kernel type in SVM model: " + kt);
    model.C = j.at("C").get<double>();
    model.tol = j.at("tol").get<double>();
    model.bias = j.at("bias").get<double>();
    for (const auto& sv : j.at("support_vectors"))
        model.support_vectors.push_back({sv.at(0).get<double>(), sv.at(1).get<double>()});
    model.dual_coefs = j.at("dual_coefs").get<std::vector<double>>();
    if (model.dual_coefs.size() != model.support_vectors.size())
        throw FormatError("SVM model: dual_coefs and support_vectors sizes differ");
    return model;
}

} // namespace biasaudit::svm
