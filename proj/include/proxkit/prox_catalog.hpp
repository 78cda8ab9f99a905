#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "proxkit/error.hpp"

namespace proxkit {

// Adaptive Simpson quadrature, used to evaluate regularizers that are only
// specified through their derivative.
inline double simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-8) {
    std::function<double(double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole, int depth) -> double {
        const double mid = 0.5 * (lo + hi);
        const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
        const double flm = f(lm), frm = f(rm);
        const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
            return left + right + (left + right - whole) / 15.0;
        }
        return rec(lo, mid, flo, flm, fmid, left, depth - 1) + rec(mid, hi, fmid, frm, fhi, right, depth - 1);
    };
    if (a == b) return 0.0;
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return rec(a, b, fa, fm, fb, whole, 40);
}

enum class FeasibleSet {
    Unconstrained,
    Box,              // [lo, hi]^n
    Simplex,          // { x >= 0, sum x = 1 }
    SphereHyperplane  // { ||x|| = sqrt(n), 1^T x = 0 }
};

// A proximal operator min_{z in C} R(z) + (lambda/2) ||z - x||^2.
// The numeric solver only needs grad_r; r itself is used by objective
// checks and may be quadrature-backed.
struct ProxOperator {
    std::function<double(const std::vector<double>&)> r;
    std::function<std::vector<double>(const std::vector<double>&)> grad_r;
    FeasibleSet set = FeasibleSet::Unconstrained;
    double box_lo = 0.0;
    double box_hi = 0.0;
    double lambda = 1.0;
    std::optional<std::function<std::vector<double>(const std::vector<double>&)>> closed_form;
    // Iterate clamp for regularizers with boundary singularities (log/logit).
    std::optional<std::pair<double, double>> domain_guard;
};

namespace detail {

inline std::vector<double> project_simplex(std::vector<double> v) {
    // Sort-based Euclidean projection onto the probability simplex.
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, theta = 0.0;
    std::size_t rho = 0;
    double run = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        run += u[j];
        const double t = (run - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            rho = j + 1;
            css = run;
        }
    }
    theta = (css - 1.0) / static_cast<double>(rho);
    for (double& x : v) x = std::max(x - theta, 0.0);
    return v;
}

inline std::vector<double> project_sphere_hyperplane(std::vector<double> v) {
    const std::size_t n = v.size();
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    for (double& x : v) x -= mean;
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) {
        throw NumericalError("sphere-hyperplane projection undefined for constant input");
    }
    const double target = std::sqrt(static_cast<double>(n));
    for (double& x : v) x *= target / nrm;
    return v;
}

}  // namespace detail

inline std::vector<double> project(const ProxOperator& op, std::vector<double> v) {
    switch (op.set) {
        case FeasibleSet::Unconstrained:
            break;
        case FeasibleSet::Box:
            for (double& x : v) x = std::clamp(x, op.box_lo, op.box_hi);
            break;
        case FeasibleSet::Simplex:
            v = detail::project_simplex(std::move(v));
            break;
        case FeasibleSet::SphereHyperplane:
            v = detail::project_sphere_hyperplane(std::move(v));
            break;
    }
    if (op.domain_guard) {
        for (double& x : v) x = std::clamp(x, op.domain_guard->first, op.domain_guard->second);
    }
    return v;
}

inline double prox_objective(const ProxOperator& op, const std::vector<double>& z, const std::vector<double>& x) {
    double quad = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) quad += (z[i] - x[i]) * (z[i] - x[i]);
    return op.r(z) + 0.5 * op.lambda * quad;
}

// Projected gradient with backtracking. The generic oracle against which the
// closed forms in this catalog are checked.
inline std::vector<double> prox_numeric(const ProxOperator& op, const std::vector<double>& x) {
    if (op.lambda <= 0.0) throw std::invalid_argument("prox_numeric: lambda must be positive");
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("prox_numeric: non-finite input");

    const std::size_t n = x.size();
    auto grad = [&](const std::vector<double>& z) {
        std::vector<double> g = op.grad_r(z);
        for (std::size_t i = 0; i < n; ++i) g[i] += op.lambda * (z[i] - x[i]);
        return g;
    };
    auto residual = [&](const std::vector<double>& z, const std::vector<double>& g) {
        std::vector<double> step(n);
        for (std::size_t i = 0; i < n; ++i) step[i] = z[i] - g[i];
        step = project(op, std::move(step));
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i) r += (z[i] - step[i]) * (z[i] - step[i]);
        return std::sqrt(r);
    };

    std::vector<double> z = project(op, x);
    double fz = prox_objective(op, z, x);
    double t = 1.0 / op.lambda;
    double t_good = t;
    const int max_iters = 10000;
    const double tol = 1e-10;       // solver target
    const double accept_tol = 1e-8; // contract bound
    double res = 0.0;
    for (int iter = 0; iter < max_iters; ++iter) {
        std::vector<double> g = grad(z);
        res = residual(z, g);
        if (res <= tol) return z;
        bool progressed = false;
        for (int bt = 0; bt < 60; ++bt) {
            std::vector<double> zn(n);
            for (std::size_t i = 0; i < n; ++i) zn[i] = z[i] - t * g[i];
            zn = project(op, std::move(zn));
            const double fn = prox_objective(op, zn, x);
            double move = 0.0;
            for (std::size_t i = 0; i < n; ++i) move += (zn[i] - z[i]) * (zn[i] - z[i]);
            if (fn < fz && fn <= fz - 1e-4 * move / std::max(t, 1e-300)) {
                z = std::move(zn);
                fz = fn;
                t_good = t;
                progressed = true;
                break;
            }
            t *= 0.5;
        }
        if (!progressed) break;  // F comparisons bottomed out in double precision
        t = std::min(t * 1.5, 1e6);
    }

    // Polish on the residual itself: near the minimizer the objective is flat
    // to machine precision, but the projected-gradient map still contracts z.
    // Steps that do not shrink the residual are rejected and halved.
    double tp = t_good;
    std::vector<double> g = grad(z);
    res = residual(z, g);
    for (int iter = 0; iter < 5000 && res > tol && tp > 1e-18; ++iter) {
        std::vector<double> zn(n);
        for (std::size_t i = 0; i < n; ++i) zn[i] = z[i] - tp * g[i];
        zn = project(op, std::move(zn));
        const std::vector<double> gn = grad(zn);
        const double resn = residual(zn, gn);
        if (resn <= res) {
            z = std::move(zn);
            g = gn;
            res = resn;
            tp *= 1.3;
        } else {
            tp *= 0.5;
        }
    }
    if (res <= accept_tol) return z;
    throw NumericalError("prox_numeric: no convergence, residual " + std::to_string(res));
}

// ---------------------------------------------------------------------------
// The catalog: classic network operations recovered as proximal maps.
// ---------------------------------------------------------------------------

inline std::vector<double> sigmoid_as_prox(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return out;
}

inline std::vector<double> relu_as_prox(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(0.0, x[i]);
    return out;
}

inline std::vector<double> hardtanh_as_prox(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], -1.0, 1.0);
    return out;
}

inline std::vector<double> softmax_as_prox(const std::vector<double>& x) {
    if (x.empty()) throw std::invalid_argument("softmax_as_prox: empty input");
    const double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

// (x - mu) / sigma with population standard deviation; lands on the set
// { ||z|| = sqrt(n), 1^T z = 0 }. Constant inputs are rejected: the
// minimizer over that set is then a whole sphere slice.
inline std::vector<double> batchnorm_as_prox(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n == 0) throw std::invalid_argument("batchnorm_as_prox: empty input");
    const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    if (var <= 0.0) {
        throw std::invalid_argument("batchnorm_as_prox: zero-variance input has no unique proximal point");
    }
    const double sd = std::sqrt(var);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mu) / sd;
    return out;
}

// ---------------------------------------------------------------------------
// Operator factories pairing each closed form with the (R, C, lambda) triple
// it minimizes, so prox_numeric can serve as an independent oracle.
// ---------------------------------------------------------------------------

inline ProxOperator make_sigmoid_operator(double lambda = 1.0) {
    ProxOperator op;
    op.lambda = lambda;
    op.set = FeasibleSet::Unconstrained;
    op.domain_guard = {1e-12, 1.0 - 1e-12};
    // R(z) = sum_i int sigma^{-1}(z_i) dz - z_i^2 / 2, anchored at 0.5.
    op.r = [](const std::vector<double>& z) {
        double acc = 0.0;
        for (double zi : z) {
            acc += simpson([](double u) { return std::log(u / (1.0 - u)); }, 0.5, zi, 1e-8);
            acc -= 0.5 * zi * zi - 0.5 * 0.25;
        }
        return acc;
    };
    op.grad_r = [](const std::vector<double>& z) {
        std::vector<double> g(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) g[i] = std::log(z[i] / (1.0 - z[i])) - z[i];
        return g;
    };
    op.closed_form = [](const std::vector<double>& x) { return sigmoid_as_prox(x); };
    return op;
}

inline ProxOperator make_relu_operator(double lambda = 1.0) {
    ProxOperator op;
    op.lambda = lambda;
    op.set = FeasibleSet::Box;
    op.box_lo = 0.0;
    op.box_hi = 1e300;
    op.r = [](const std::vector<double>&) { return 0.0; };
    op.grad_r = [](const std::vector<double>& z) { return std::vector<double>(z.size(), 0.0); };
    op.closed_form = [](const std::vector<double>& x) { return relu_as_prox(x); };
    return op;
}

inline ProxOperator make_hardtanh_operator(double lambda = 1.0) {
    ProxOperator op;
    op.lambda = lambda;
    op.set = FeasibleSet::Box;
    op.box_lo = -1.0;
    op.box_hi = 1.0;
    op.r = [](const std::vector<double>&) { return 0.0; };
    op.grad_r = [](const std::vector<double>& z) { return std::vector<double>(z.size(), 0.0); };
    op.closed_form = [](const std::vector<double>& x) { return hardtanh_as_prox(x); };
    return op;
}

inline ProxOperator make_softmax_operator(double lambda = 1.0) {
    ProxOperator op;
    op.lambda = lambda;
    op.set = FeasibleSet::Simplex;
    op.domain_guard = {1e-12, 1.0 - 1e-12};
    op.r = [](const std::vector<double>& z) {
        double acc = 0.0;
        for (double zi : z) acc += zi * std::log(std::max(zi, 1e-300)) - 0.5 * zi * zi;
        return acc;
    };
    op.grad_r = [](const std::vector<double>& z) {
        std::vector<double> g(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) g[i] = std::log(z[i]) + 1.0 - z[i];
        return g;
    };
    op.closed_form = [](const std::vector<double>& x) { return softmax_as_prox(x); };
    return op;
}

inline ProxOperator make_batchnorm_operator(double lambda = 1.0) {
    ProxOperator op;
    op.lambda = lambda;
    op.set = FeasibleSet::SphereHyperplane;
    op.r = [](const std::vector<double>&) { return 0.0; };
    op.grad_r = [](const std::vector<double>& z) { return std::vector<double>(z.size(), 0.0); };
    op.closed_form = [](const std::vector<double>& x) { return batchnorm_as_prox(x); };
    return op;
}

}  // namespace proxkit
