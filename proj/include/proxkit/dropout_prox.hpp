#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/matrix.hpp"

namespace proxkit {

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// log(1 + exp(-t)) without overflow.
inline double log1p_exp_neg(double t) {
    return t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

struct DropoutProxConfig {
    double lambda = 0.5;
    double s_max = 10.0;      // half-width of the line-search grid
    int grid_points = 401;
    double refine_tol = 1e-6; // golden-section window width on s
    double mu_tol = 1e-10;    // bisection interval width on the multiplier

    void validate() const {
        if (lambda <= 0.0) throw std::invalid_argument("DropoutProxConfig: lambda must be positive");
        if (grid_points < 3) throw std::invalid_argument("DropoutProxConfig: need at least 3 grid points");
        if (refine_tol <= 0.0 || refine_tol > 1e-3) {
            throw std::invalid_argument("DropoutProxConfig: refine_tol must lie in (0, 1e-3]");
        }
    }
};

struct DropoutProxResult {
    std::vector<double> c;
    double s = 0.0;
    double mu = 0.0;
    double objective = 0.0;
};

namespace detail {

// On the slice x^T c = s the dropout weight is the constant
// alpha_s = p(1-p) with p = sigma(s).
inline double alpha_of_s(double s) { return 2.0 / (2.0 + std::exp(s) + std::exp(-s)); }

struct SliceSolution {
    std::vector<double> c;
    double mu;
    double objective;
};

// Minimizes (alpha_s/2) sum x_i^2 c_i^2 + (lambda/2)||c - x||^2 subject to
// x^T c = s. The multiplier equation x^T c(mu) = s is strictly increasing in
// mu, so bisection finds the unique root.
inline SliceSolution solve_slice(const std::vector<double>& x, double s, double lambda, double mu_tol) {
    const double alpha = alpha_of_s(s);
    const std::size_t n = x.size();
    auto c_of_mu = [&](double mu) {
        std::vector<double> c(n);
        for (std::size_t i = 0; i < n; ++i) c[i] = (lambda + mu) * x[i] / (lambda + alpha * x[i] * x[i]);
        return c;
    };
    auto g = [&](double mu) {
        double acc = -s;
        for (std::size_t i = 0; i < n; ++i) acc += (lambda + mu) * x[i] * x[i] / (lambda + alpha * x[i] * x[i]);
        return acc;
    };

    double max_ax2 = 0.0, x2 = 0.0;
    for (double xi : x) {
        max_ax2 = std::max(max_ax2, alpha * xi * xi);
        x2 += xi * xi;
    }
    double lo = -lambda;
    double hi = lambda * (1.0 + max_ax2) * std::max(x2, 1.0);
    int expansions = 0;
    while (g(lo) > 0.0 && expansions < 200) {
        lo *= 2.0;
        ++expansions;
    }
    while (g(hi) < 0.0 && expansions < 200) {
        hi = std::max(hi * 2.0, 1.0);
        ++expansions;
    }
    if (g(lo) > 0.0 || g(hi) < 0.0) {
        throw NumericalError("prox_dropout: bisection bracket failure, g(" + std::to_string(lo) + ") = " +
                             std::to_string(g(lo)) + ", g(" + std::to_string(hi) + ") = " + std::to_string(g(hi)));
    }
    // Bisect until the requested width or until doubles cannot split the
    // interval any further (large multipliers hit spacing before 1e-10).
    for (int it = 0; it < 200 && hi - lo > mu_tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    const double mu = 0.5 * (lo + hi);
    SliceSolution sol;
    sol.c = c_of_mu(mu);
    sol.mu = mu;
    double quad = 0.0, move = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        quad += x[i] * x[i] * sol.c[i] * sol.c[i];
        move += (sol.c[i] - x[i]) * (sol.c[i] - x[i]);
    }
    sol.objective = 0.5 * alpha * quad + 0.5 * lambda * move;
    return sol;
}

}  // namespace detail

// Dropout-as-prox: c_x = argmin_c (1/2) p(1-p) sum x_i^2 c_i^2
// + (lambda/2)||c - x||^2 with p = sigma(x^T c), solved by an exact inner
// slice solve plus a 1-D line search on s = x^T c (grid, then golden-section
// refinement around the best grid point).
inline DropoutProxResult prox_dropout(const std::vector<double>& x, const DropoutProxConfig& cfg) {
    cfg.validate();
    double x2 = 0.0;
    for (double v : x) {
        if (!std::isfinite(v)) throw std::invalid_argument("prox_dropout: non-finite input");
        x2 += v * v;
    }
    if (x2 == 0.0) {
        return DropoutProxResult{std::vector<double>(x.size(), 0.0), 0.0, 0.0, 0.0};
    }

    // |x^T c*| <= 2||x||^2 because the optimum cannot be farther from x than 0 is.
    const double s_half = std::max(cfg.s_max, 2.0 * x2);
    const int np = cfg.grid_points;
    double best_s = 0.0, best_obj = 0.0;
    bool first = true;
    for (int i = 0; i < np; ++i) {
        const double s = -s_half + 2.0 * s_half * static_cast<double>(i) / static_cast<double>(np - 1);
        const detail::SliceSolution sol = detail::solve_slice(x, s, cfg.lambda, cfg.mu_tol);
        if (first || sol.objective < best_obj) {
            best_obj = sol.objective;
            best_s = s;
            first = false;
        }
    }

    const double step = 2.0 * s_half / static_cast<double>(np - 1);
    double a = best_s - step, b = best_s + step;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double s1 = b - gr * (b - a), s2 = a + gr * (b - a);
    double f1 = detail::solve_slice(x, s1, cfg.lambda, cfg.mu_tol).objective;
    double f2 = detail::solve_slice(x, s2, cfg.lambda, cfg.mu_tol).objective;
    while (b - a > cfg.refine_tol) {
        if (f1 <= f2) {
            b = s2;
            s2 = s1;
            f2 = f1;
            s1 = b - gr * (b - a);
            f1 = detail::solve_slice(x, s1, cfg.lambda, cfg.mu_tol).objective;
        } else {
            a = s1;
            s1 = s2;
            f1 = f2;
            s2 = a + gr * (b - a);
            f2 = detail::solve_slice(x, s2, cfg.lambda, cfg.mu_tol).objective;
        }
    }
    const double s_star = 0.5 * (a + b);
    const detail::SliceSolution sol = detail::solve_slice(x, s_star, cfg.lambda, cfg.mu_tol);
    return DropoutProxResult{sol.c, s_star, sol.mu, sol.objective};
}

// ---------------------------------------------------------------------------
// The two training routes compared in the simulation: adaptive-regularizer
// dropout (P1) and logistic regression on proxed inputs (P2).
// ---------------------------------------------------------------------------

struct LabeledData {
    DenseMatrix x;              // n x d
    std::vector<double> y;      // labels in {-1, +1}

    void validate() const {
        if (x.rows() != y.size()) throw std::invalid_argument("LabeledData: row/label count mismatch");
        for (double v : y)
            if (v != 1.0 && v != -1.0) throw std::invalid_argument("LabeledData: labels must be -1 or +1");
    }
};

namespace detail {

struct LogisticObjective {
    // value and gradient of (1/n) sum log(1+exp(-y w^T x)) + penalty(w)
    std::function<double(const std::vector<double>&)> value;
    std::function<std::vector<double>(const std::vector<double>&)> grad;
};

inline std::vector<double> descend(const LogisticObjective& obj, std::size_t dim, double grad_tol,
                                   const char* what) {
    std::vector<double> w(dim, 0.0);
    double fw = obj.value(w);
    double t = 1.0;
    const int max_iters = 200000;
    for (int iter = 0; iter < max_iters; ++iter) {
        const std::vector<double> g = obj.grad(w);
        double gnorm = 0.0;
        for (double v : g) gnorm += v * v;
        gnorm = std::sqrt(gnorm);
        if (gnorm <= grad_tol) return w;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            std::vector<double> wn(dim);
            for (std::size_t i = 0; i < dim; ++i) wn[i] = w[i] - t * g[i];
            const double fn = obj.value(wn);
            if (fn <= fw - 1e-4 * t * gnorm * gnorm) {
                w = std::move(wn);
                fw = fn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            throw NumericalError(std::string(what) + ": line search stalled at gradient norm " +
                                 std::to_string(gnorm));
        }
        t = std::min(t * 1.5, 1e4);
    }
    throw NumericalError(std::string(what) + ": no convergence after 200000 iterations");
}

}  // namespace detail

// Adaptive-regularizer dropout training (the RRM route):
// min_beta (1/n) sum log(1+exp(-y_i beta^T x_i)) + mu sum_j a_j beta_j^2,
// a_j = (1/n) sum_i p_i (1-p_i) x_ij^2 re-evaluated at the current beta.
inline std::vector<double> rrm_dropout_train(const LabeledData& data, double mu, double grad_tol = 1e-6) {
    data.validate();
    const std::size_t n = data.x.rows(), d = data.x.cols();
    auto weights = [&](const std::vector<double>& beta) {
        std::vector<double> a(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < d; ++j) t += beta[j] * data.x(i, j);
            const double p = logistic(t);
            const double w = p * (1.0 - p);
            for (std::size_t j = 0; j < d; ++j) a[j] += w * data.x(i, j) * data.x(i, j);
        }
        for (double& v : a) v /= static_cast<double>(n);
        return a;
    };
    auto value_at = [&, mu](const std::vector<double>& beta, const std::vector<double>& a) {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < d; ++j) t += beta[j] * data.x(i, j);
            loss += log1p_exp_neg(data.y[i] * t);
        }
        loss /= static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) loss += mu * a[j] * beta[j] * beta[j];
        return loss;
    };
    auto grad_at = [&, mu](const std::vector<double>& beta, const std::vector<double>& a) {
        std::vector<double> g(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < d; ++j) t += beta[j] * data.x(i, j);
            const double coef = -data.y[i] * logistic(-data.y[i] * t) / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j) g[j] += coef * data.x(i, j);
        }
        for (std::size_t j = 0; j < d; ++j) g[j] += 2.0 * mu * a[j] * beta[j];
        return g;
    };

    // a_j is frozen within each iteration (gradient and line search), then
    // re-evaluated; the divergence guard watches the refreshed objective.
    std::vector<double> beta(d, 0.0);
    double t = 1.0;
    double prev_full = value_at(beta, weights(beta));
    int bad_streak = 0;
    const int max_iters = 200000;
    for (int iter = 0; iter < max_iters; ++iter) {
        const std::vector<double> a = weights(beta);
        const std::vector<double> g = grad_at(beta, a);
        double gnorm = 0.0;
        for (double v : g) gnorm += v * v;
        gnorm = std::sqrt(gnorm);
        if (gnorm <= grad_tol) return beta;
        const double f0 = value_at(beta, a);
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            std::vector<double> bn(d);
            for (std::size_t j = 0; j < d; ++j) bn[j] = beta[j] - t * g[j];
            if (value_at(bn, a) <= f0 - 1e-4 * t * gnorm * gnorm) {
                beta = std::move(bn);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            throw NumericalError("rrm_dropout_train: line search stalled at gradient norm " + std::to_string(gnorm));
        }
        t = std::min(t * 1.5, 1e4);
        const double full = value_at(beta, weights(beta));
        bad_streak = full > prev_full ? bad_streak + 1 : 0;
        if (bad_streak >= 50) {
            throw NumericalError("rrm_dropout_train: loss increased over 50 consecutive steps");
        }
        prev_full = full;
    }
    throw NumericalError("rrm_dropout_train: no convergence after 200000 iterations");
}

// Logistic regression with ridge c on precomputed prox outputs (the P2 route).
inline std::vector<double> prox_pipeline_train(const LabeledData& data, const DropoutProxConfig& cfg, double c_reg,
                                               double grad_tol = 1e-6) {
    data.validate();
    const std::size_t n = data.x.rows(), d = data.x.cols();
    DenseMatrix z(n, d);
    std::vector<double> xi(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) xi[j] = data.x(i, j);
        const DropoutProxResult r = prox_dropout(xi, cfg);
        for (std::size_t j = 0; j < d; ++j) z(i, j) = r.c[j];
    }
    detail::LogisticObjective obj;
    obj.value = [&, c_reg](const std::vector<double>& alpha) {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < d; ++j) t += alpha[j] * z(i, j);
            loss += log1p_exp_neg(data.y[i] * t);
        }
        loss /= static_cast<double>(n);
        for (double v : alpha) loss += c_reg * v * v;
        return loss;
    };
    obj.grad = [&, c_reg](const std::vector<double>& alpha) {
        std::vector<double> g(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < d; ++j) t += alpha[j] * z(i, j);
            const double coef = -data.y[i] * logistic(-data.y[i] * t) / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j) g[j] += coef * z(i, j);
        }
        for (std::size_t j = 0; j < d; ++j) g[j] += 2.0 * c_reg * alpha[j];
        return g;
    };
    return detail::descend(obj, d, grad_tol, "prox_pipeline_train");
}

struct DiscriminantComparison {
    std::vector<std::pair<double, double>> pairs;  // (beta^T x_i, alpha^T prox(x_i))
    double pearson_r = 0.0;
};

inline DiscriminantComparison compare_discriminants(const LabeledData& data, const std::vector<double>& beta,
                                                    const std::vector<double>& alpha,
                                                    const DropoutProxConfig& cfg) {
    data.validate();
    const std::size_t n = data.x.rows(), d = data.x.cols();
    DiscriminantComparison out;
    out.pairs.reserve(n);
    std::vector<double> xi(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) xi[j] = data.x(i, j);
        double rrm = 0.0;
        for (std::size_t j = 0; j < d; ++j) rrm += beta[j] * xi[j];
        const DropoutProxResult r = prox_dropout(xi, cfg);
        double prox = 0.0;
        for (std::size_t j = 0; j < d; ++j) prox += alpha[j] * r.c[j];
        out.pairs.emplace_back(rrm, prox);
    }
    double ma = 0.0, mb = 0.0;
    for (const auto& [u, v] : out.pairs) {
        ma += u;
        mb += v;
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sa = 0.0, sb = 0.0, sab = 0.0;
    for (const auto& [u, v] : out.pairs) {
        sa += (u - ma) * (u - ma);
        sb += (v - mb) * (v - mb);
        sab += (u - ma) * (v - mb);
    }
    if (sa <= 0.0 || sb <= 0.0) {
        throw NumericalError("compare_discriminants: zero-variance discriminants, correlation undefined");
    }
    out.pearson_r = sab / std::sqrt(sa * sb);
    return out;
}

}  // namespace proxkit
