#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "proxkit/datasets.hpp"
#include "proxkit/dropout_prox.hpp"
#include "proxkit/rng.hpp"

using namespace proxkit;

namespace {

double alpha_of(double s) { return 2.0 / (2.0 + std::exp(s) + std::exp(-s)); }

// Objective of the dropout prox in the solver's weight family.
double dropout_objective(const std::vector<double>& x, const std::vector<double>& c, double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * c[i];
    const double a = alpha_of(s);
    double quad = 0.0, move = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        quad += x[i] * x[i] * c[i] * c[i];
        move += (c[i] - x[i]) * (c[i] - x[i]);
    }
    return 0.5 * a * quad + 0.5 * lambda * move;
}

// Alternating oracle: c-update with the weight frozen, then weight update,
// iterated to a self-consistent point.
std::vector<double> fixed_point_oracle(const std::vector<double>& x, double lambda) {
    std::vector<double> c = x;
    for (int it = 0; it < 200000; ++it) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * c[i];
        const double a = alpha_of(s);
        double diff = 0.0;
        std::vector<double> cn(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            cn[i] = lambda * x[i] / (lambda + a * x[i] * x[i]);
            diff = std::max(diff, std::abs(cn[i] - c[i]));
        }
        c = std::move(cn);
        if (diff < 1e-15) break;
    }
    return c;
}

LabeledData tiny_separable() {
    LabeledData d;
    d.x = DenseMatrix::from_rows({{1.0, 0.5}, {-1.0, -0.5}});
    d.y = {1.0, -1.0};
    return d;
}

LabeledData twomoon_data(std::size_t n, std::uint64_t seed) {
    const TwoMoonData tm = gen_twomoon(n, 0.08, seed);
    LabeledData d;
    d.x = tm.points;
    d.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.y[i] = tm.labels[i];
    return d;
}

}  // namespace

TEST_CASE("prox_dropout trivial cases") {
    DropoutProxConfig cfg;
    {
        const DropoutProxResult r = prox_dropout({0.0, 0.0, 0.0}, cfg);
        for (double v : r.c) REQUIRE(v == 0.0);
        REQUIRE(r.s == 0.0);
    }
    {
        DropoutProxConfig big = cfg;
        big.lambda = 1e6;
        const std::vector<double> x{0.7, -1.1, 0.4};
        const DropoutProxResult r = prox_dropout(x, big);
        for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(std::abs(r.c[i] - x[i]) <= 1e-4);
    }
    REQUIRE_THROWS_AS(prox_dropout({std::nan("")}, DropoutProxConfig{}), std::invalid_argument);
    {
        DropoutProxConfig bad;
        bad.refine_tol = 1e-2;  // must be <= 1e-3
        REQUIRE_THROWS_AS(prox_dropout({1.0}, bad), std::invalid_argument);
    }
}

TEST_CASE("prox_dropout satisfies the slice equations and self-consistency") {
    SplitMix64 rng(41);
    DropoutProxConfig cfg;
    cfg.lambda = 0.5;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(3);
        for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
        const DropoutProxResult r = prox_dropout(x, cfg);
        // x^T c equals the line-search point, so the implied dropout rate is
        // self-consistent.
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i) s += x[i] * r.c[i];
        REQUIRE(std::abs(s - r.s) <= 1e-8);
        REQUIRE(std::abs(logistic(s) - logistic(r.s)) <= 1e-8);
        // Coordinates follow the multiplier closed form.
        const double a = alpha_of(r.s);
        for (std::size_t i = 0; i < 3; ++i) {
            REQUIRE(r.c[i] ==
                    Catch::Approx((cfg.lambda + r.mu) * x[i] / (cfg.lambda + a * x[i] * x[i])).margin(1e-8));
        }
    }
}

TEST_CASE("inner multiplier equation is strictly increasing with a sign-changing bracket") {
    SplitMix64 rng(42);
    const double lambda = 0.7;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(4);
        for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
        const double s = rng.next_uniform(-3.0, 3.0);
        const double a = alpha_of(s);
        auto g = [&](double mu) {
            double acc = -s;
            for (double xi : x) acc += (lambda + mu) * xi * xi / (lambda + a * xi * xi);
            return acc;
        };
        const detail::SliceSolution sol = detail::solve_slice(x, s, lambda, 1e-10);
        // Monotone residual: g increases through the root.
        double prev = g(sol.mu - 1.0);
        for (double delta : {-0.5, -0.1, 0.0, 0.1, 0.5, 1.0}) {
            const double cur = g(sol.mu + delta);
            REQUIRE(cur >= prev);
            prev = cur;
        }
        REQUIRE(std::abs(g(sol.mu)) <= 1e-8);
        REQUIRE(g(sol.mu - 1.0) < 0.0);
        REQUIRE(g(sol.mu + 1.0) > 0.0);
    }
}

TEST_CASE("objective dominance at the returned point") {
    SplitMix64 rng(43);
    DropoutProxConfig cfg;
    cfg.lambda = 0.5;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(3);
        for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
        const DropoutProxResult r = prox_dropout(x, cfg);
        const double f = dropout_objective(x, r.c, cfg.lambda);
        REQUIRE(f <= dropout_objective(x, x, cfg.lambda) + 1e-10);
        REQUIRE(f <= dropout_objective(x, std::vector<double>(3, 0.0), cfg.lambda) + 1e-10);
    }
}

TEST_CASE("fixed-point oracle agreement in the weak-coupling regime") {
    // Where the envelope term alpha'(s) * sum x_i^2 c_i^2 is negligible, the
    // objective-minimizing line search and the self-consistent fixed point
    // coincide. (For generic x they are different solution concepts; see the
    // dominance check below.)
    SplitMix64 rng(44);
    DropoutProxConfig cfg;
    cfg.lambda = 0.5;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(3);
        for (double& v : x) v = rng.next_uniform(-0.2, 0.2);
        const DropoutProxResult r = prox_dropout(x, cfg);
        const std::vector<double> fp = fixed_point_oracle(x, cfg.lambda);
        for (std::size_t i = 0; i < 3; ++i) REQUIRE(std::abs(r.c[i] - fp[i]) <= 1e-4);
    }
}

TEST_CASE("line-search result dominates the fixed point in objective value") {
    SplitMix64 rng(45);
    DropoutProxConfig cfg;
    cfg.lambda = 0.5;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(3);
        for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
        const DropoutProxResult r = prox_dropout(x, cfg);
        const std::vector<double> fp = fixed_point_oracle(x, cfg.lambda);
        REQUIRE(dropout_objective(x, r.c, cfg.lambda) <= dropout_objective(x, fp, cfg.lambda) + 1e-8);
    }
}

TEST_CASE("reformulation bookkeeping: beta^T x equals h^T c_x") {
    SplitMix64 rng(46);
    DropoutProxConfig cfg;
    cfg.lambda = 0.8;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(4), beta(4);
        for (double& v : x) v = rng.next_uniform(-1.5, 1.5);
        for (double& v : beta) v = rng.next_uniform(-2.0, 2.0);
        const DropoutProxResult r = prox_dropout(x, cfg);
        const double a = alpha_of(r.s);
        double bx = 0.0, hc = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            bx += beta[i] * x[i];
            const double h = beta[i] * (cfg.lambda + a * x[i] * x[i]) / (cfg.lambda + r.mu);
            hc += h * r.c[i];
        }
        REQUIRE(std::abs(bx - hc) <= 1e-10 * std::max(1.0, std::abs(bx)));
    }
}

TEST_CASE("rrm_dropout_train basics") {
    {
        const std::vector<double> beta = rrm_dropout_train(tiny_separable(), 0.05);
        const LabeledData d = tiny_separable();
        for (std::size_t i = 0; i < 2; ++i) {
            double t = 0.0;
            for (std::size_t j = 0; j < 2; ++j) t += beta[j] * d.x(i, j);
            REQUIRE(t * d.y[i] > 0.0);
        }
    }
    {
        // (x, +1) and (-x, -1) with equal-magnitude coordinates: coordinate
        // exchange symmetry forces beta along x.
        LabeledData d;
        d.x = DenseMatrix::from_rows({{1.0, 1.0}, {-1.0, -1.0}, {1.0, 1.0}, {-1.0, -1.0}});
        d.y = {1.0, -1.0, 1.0, -1.0};
        const std::vector<double> beta = rrm_dropout_train(d, 0.3);
        REQUIRE(beta[0] > 0.0);
        REQUIRE(std::abs(beta[0] - beta[1]) <= 1e-5 * std::max(1.0, std::abs(beta[0])));
    }
    {
        // Anisotropic x = (2,1): the adaptive penalty mu * sum_j a_j beta_j^2
        // with a_j proportional to x_j^2 puts the minimizer on the
        // whitened direction beta_2 = 2 beta_1, not along x.
        LabeledData d;
        d.x = DenseMatrix::from_rows({{2.0, 1.0}, {-2.0, -1.0}, {2.0, 1.0}, {-2.0, -1.0}});
        d.y = {1.0, -1.0, 1.0, -1.0};
        const std::vector<double> beta = rrm_dropout_train(d, 0.3, 1e-9);
        REQUIRE(beta[0] > 0.0);
        REQUIRE(std::abs(beta[1] - 2.0 * beta[0]) <= 1e-5 * std::max(1.0, std::abs(beta[1])));
    }
    {
        LabeledData bad = tiny_separable();
        bad.y[0] = 0.5;
        REQUIRE_THROWS_AS(rrm_dropout_train(bad, 0.1), std::invalid_argument);
    }
}

TEST_CASE("rrm with mu=0 matches plain logistic regression") {
    const LabeledData d = twomoon_data(60, 5);
    const std::vector<double> beta = rrm_dropout_train(d, 0.0);

    // Independent oracle: unregularized logistic fit by its own descent.
    const std::size_t n = d.x.rows(), dim = d.x.cols();
    std::vector<double> w(dim, 0.0);
    double t = 1.0;
    for (int iter = 0; iter < 200000; ++iter) {
        std::vector<double> g(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double z = 0.0;
            for (std::size_t j = 0; j < dim; ++j) z += w[j] * d.x(i, j);
            const double coef = -d.y[i] * logistic(-d.y[i] * z) / double(n);
            for (std::size_t j = 0; j < dim; ++j) g[j] += coef * d.x(i, j);
        }
        double gn = 0.0;
        for (double v : g) gn += v * v;
        if (std::sqrt(gn) <= 1e-7) break;
        for (std::size_t j = 0; j < dim; ++j) w[j] -= t * g[j];
    }
    for (std::size_t j = 0; j < dim; ++j) REQUIRE(std::abs(beta[j] - w[j]) <= 1e-4 * std::max(1.0, std::abs(w[j])));
}

TEST_CASE("prox_pipeline_train basics") {
    DropoutProxConfig cfg;
    cfg.lambda = 0.5;
    {
        // Huge ridge shrinks alpha to ~0.
        const std::vector<double> alpha = prox_pipeline_train(twomoon_data(40, 6), cfg, 1e6);
        for (double v : alpha) REQUIRE(std::abs(v) <= 1e-4);
    }
    {
        const std::vector<double> alpha = prox_pipeline_train(tiny_separable(), cfg, 0.01);
        const LabeledData d = tiny_separable();
        DropoutProxConfig c2 = cfg;
        for (std::size_t i = 0; i < 2; ++i) {
            std::vector<double> xi{d.x(i, 0), d.x(i, 1)};
            const DropoutProxResult r = prox_dropout(xi, c2);
            double t = 0.0;
            for (std::size_t j = 0; j < 2; ++j) t += alpha[j] * r.c[j];
            REQUIRE(t * d.y[i] > 0.0);
        }
    }
}

TEST_CASE("huge lambda reduces the pipeline to ridge logistic regression on raw inputs") {
    const LabeledData d = twomoon_data(50, 7);
    DropoutProxConfig cfg;
    cfg.lambda = 1e8;  // prox outputs equal raw inputs to ~1e-8
    const double c_reg = 0.05;
    const std::vector<double> alpha = prox_pipeline_train(d, cfg, c_reg);

    // Ridge logistic on raw data via an independent descent.
    const std::size_t n = d.x.rows(), dim = d.x.cols();
    std::vector<double> w(dim, 0.0);
    for (int iter = 0; iter < 200000; ++iter) {
        std::vector<double> g(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double z = 0.0;
            for (std::size_t j = 0; j < dim; ++j) z += w[j] * d.x(i, j);
            const double coef = -d.y[i] * logistic(-d.y[i] * z) / double(n);
            for (std::size_t j = 0; j < dim; ++j) g[j] += coef * d.x(i, j);
        }
        for (std::size_t j = 0; j < dim; ++j) g[j] += 2.0 * c_reg * w[j];
        double gn = 0.0;
        for (double v : g) gn += v * v;
        if (std::sqrt(gn) <= 1e-8) break;
        for (std::size_t j = 0; j < dim; ++j) w[j] -= 0.5 * g[j];
    }
    for (std::size_t j = 0; j < dim; ++j) REQUIRE(std::abs(alpha[j] - w[j]) <= 1e-4);
}

TEST_CASE("compare_discriminants endpoints") {
    const LabeledData d = twomoon_data(30, 8);
    DropoutProxConfig cfg;
    cfg.lambda = 1e8;  // prox ~ identity, so both discriminants see raw x
    {
        // Identical models on identical features: r = 1.
        const std::vector<double> beta{0.4, -1.3};
        const DiscriminantComparison cmp = compare_discriminants(d, beta, beta, cfg);
        REQUIRE(cmp.pearson_r == Catch::Approx(1.0).margin(1e-6));
    }
    {
        // Negated model: r = -1.
        const std::vector<double> beta{0.4, -1.3};
        const std::vector<double> neg{-0.4, 1.3};
        const DiscriminantComparison cmp = compare_discriminants(d, beta, neg, cfg);
        REQUIRE(cmp.pearson_r == Catch::Approx(-1.0).margin(1e-6));
    }
    {
        const std::vector<double> zero{0.0, 0.0};
        REQUIRE_THROWS_AS(compare_discriminants(d, zero, zero, cfg), NumericalError);
    }
}
