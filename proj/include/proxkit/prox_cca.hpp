#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/linalg.hpp"
#include "proxkit/matrix.hpp"
#include "proxkit/tape.hpp"

namespace proxkit {

// Raised when the top-k singular values of T are not separated from the
// rest; the objective's subgradient is then set-valued and we refuse to pick.
class DegenerateSpectrum : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// A pair of centered d x n views. Construction validates the invariants;
// the numeric routines below accept raw matrices so that perturbed solves
// (finite differences, Domke adjoints) stay representable.
struct CcaBatch {
    DenseMatrix x;
    DenseMatrix y;

    static CcaBatch make(DenseMatrix x, DenseMatrix y) {
        require_finite(x, "CcaBatch");
        require_finite(y, "CcaBatch");
        require_same_shape(x, y, "CcaBatch");
        for (const DenseMatrix* m : {&x, &y}) {
            for (std::size_t i = 0; i < m->rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < m->cols(); ++j) s += (*m)(i, j);
                if (std::abs(s) > 1e-10 * std::max(1.0, max_abs(*m))) {
                    throw std::invalid_argument("CcaBatch: rows are not centered (row sum " + std::to_string(s) + ")");
                }
            }
        }
        return CcaBatch{std::move(x), std::move(y)};
    }
};

struct CcaProxLayer {
    std::size_t k = 2;          // components entering the objective
    double eps = 1e-4;          // T-matrix stabilizer
    double k_sched = 0.5;       // lambda schedule slope
    double alpha0 = 0.1;        // lambda schedule base
    int max_iters = 2000;
    double grad_tol = 1e-6;
    double armijo_c = 1e-4;
    double shrink = 0.5;
    double domke_eps_scale = 1e-4;
    double fade_threshold = 1e6;  // lambda at which the prox is bypassed
    double backward_tol = 1e-10;  // inner tolerance for the Domke solves

    void validate(std::size_t d) const {
        if (k == 0 || k > d) throw std::invalid_argument("CcaProxLayer: k must lie in [1, d]");
        if (eps <= 0.0) throw std::invalid_argument("CcaProxLayer: eps must be positive");
        if (alpha0 <= 0.0) throw std::invalid_argument("CcaProxLayer: alpha0 must be positive");
        if (k_sched < 0.0) throw std::invalid_argument("CcaProxLayer: schedule slope must be nonnegative");
    }
};

// lambda_t = (1 + k t) alpha_0 at epoch t.
inline double lambda_schedule(double k_sched, double alpha0, std::size_t epoch) {
    if (k_sched < 0.0) throw std::invalid_argument("lambda_schedule: slope must be nonnegative");
    if (alpha0 <= 0.0) throw std::invalid_argument("lambda_schedule: alpha0 must be positive");
    return (1.0 + k_sched * static_cast<double>(epoch)) * alpha0;
}

struct CcaObjective {
    double value = 0.0;   // L = -sum of top-k singular values of T
    DenseMatrix t;
    SvdResult svd;
};

namespace detail {

struct EigPair {
    std::vector<double> evals;  // clamped to >= 0, stabilizer added
    DenseMatrix vectors;
    DenseMatrix inv_sqrt;
};

inline EigPair stabilized_inv_sqrt(const DenseMatrix& gram, double eps) {
    auto [evals, vecs] = sym_eig(gram);
    const std::size_t d = gram.rows();
    EigPair out;
    out.evals.resize(d);
    for (std::size_t i = 0; i < d; ++i) out.evals[i] = std::max(evals[i], 0.0) + eps;
    out.inv_sqrt = DenseMatrix(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += vecs(i, k) * vecs(j, k) / std::sqrt(out.evals[k]);
            out.inv_sqrt(i, j) = s;
            out.inv_sqrt(j, i) = s;
        }
    out.vectors = std::move(vecs);
    return out;
}

}  // namespace detail

// L(X, Y) = -sum_{i<=k} sigma_i(T),
// T = (X X^T + eps I)^{-1/2} (X Y^T) (Y Y^T + eps I)^{-1/2}.
inline CcaObjective cca_objective(const DenseMatrix& x, const DenseMatrix& y, double eps, std::size_t k) {
    require_same_shape(x, y, "cca_objective");
    if (k == 0 || k > x.rows()) throw std::invalid_argument("cca_objective: k out of range");
    if (eps <= 0.0) throw std::invalid_argument("cca_objective: eps must be positive");
    const detail::EigPair ea = detail::stabilized_inv_sqrt(matmul(x, transpose(x)), eps);
    const detail::EigPair eb = detail::stabilized_inv_sqrt(matmul(y, transpose(y)), eps);
    CcaObjective out;
    out.t = matmul(ea.inv_sqrt, matmul(matmul(x, transpose(y)), eb.inv_sqrt));
    out.svd = svd(out.t);
    double corr = 0.0;
    for (std::size_t i = 0; i < k; ++i) corr += out.svd.sigma[i];
    out.value = -corr;
    return out;
}

// Analytic gradient of L, chained through both inverse square roots with the
// Daleckii-Krein divided-difference form so no eigenvalue spacing of the
// Gram matrices is assumed. Requires the top-k singular values of T to be
// separated from sigma_{k+1}.
inline std::pair<DenseMatrix, DenseMatrix> cca_objective_grad(const DenseMatrix& x, const DenseMatrix& y, double eps,
                                                              std::size_t k) {
    require_same_shape(x, y, "cca_objective_grad");
    const std::size_t d = x.rows();
    if (k == 0 || k > d) throw std::invalid_argument("cca_objective_grad: k out of range");
    const detail::EigPair ea = detail::stabilized_inv_sqrt(matmul(x, transpose(x)), eps);
    const detail::EigPair eb = detail::stabilized_inv_sqrt(matmul(y, transpose(y)), eps);
    const DenseMatrix c = matmul(x, transpose(y));
    const DenseMatrix t = matmul(ea.inv_sqrt, matmul(c, eb.inv_sqrt));
    const SvdResult ts = svd(t);
    if (k < d && ts.sigma[k - 1] - ts.sigma[k] < 1e-8) {
        throw DegenerateSpectrum("cca_objective_grad: sigma_k - sigma_{k+1} = " +
                                 std::to_string(ts.sigma[k - 1] - ts.sigma[k]) + " < 1e-8");
    }
    if (ts.sigma[k - 1] < 1e-12) {
        throw DegenerateSpectrum("cca_objective_grad: sigma_k = " + std::to_string(ts.sigma[k - 1]) +
                                 " is numerically zero");
    }

    // Delta = U_k V_k^T
    DenseMatrix delta(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += ts.u(i, l) * ts.vt(l, j);
            delta(i, j) = s;
        }

    // d corr through C = X Y^T.
    const DenseMatrix mc = matmul(ea.inv_sqrt, matmul(delta, eb.inv_sqrt));
    DenseMatrix grad_x = matmul(mc, y);
    DenseMatrix grad_y = matmul(transpose(mc), x);

    // d corr through the inverse square roots.
    auto add_gram_path = [](const detail::EigPair& eig, const DenseMatrix& psi, const DenseMatrix& data,
                            DenseMatrix& grad) {
        const std::size_t d = data.rows();
        const DenseMatrix core = matmul(transpose(eig.vectors), matmul(psi, eig.vectors));
        DenseMatrix scaled(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double si = std::sqrt(eig.evals[i]), sj = std::sqrt(eig.evals[j]);
                scaled(i, j) = -core(i, j) / (si * sj * (si + sj));
            }
        const DenseMatrix theta = matmul(eig.vectors, matmul(scaled, transpose(eig.vectors)));
        const DenseMatrix sym = add(theta, transpose(theta));
        const DenseMatrix contrib = matmul(sym, data);
        for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] += contrib.data()[i];
    };
    const DenseMatrix psi_a = matmul(delta, matmul(eb.inv_sqrt, transpose(c)));
    const DenseMatrix psi_b = matmul(transpose(c), matmul(ea.inv_sqrt, delta));
    add_gram_path(ea, psi_a, x, grad_x);
    add_gram_path(eb, psi_b, y, grad_y);

    // L = -corr.
    for (std::size_t i = 0; i < grad_x.size(); ++i) grad_x.data()[i] = -grad_x.data()[i];
    for (std::size_t i = 0; i < grad_y.size(); ++i) grad_y.data()[i] = -grad_y.data()[i];
    return {std::move(grad_x), std::move(grad_y)};
}

struct ProxCcaResult {
    DenseMatrix p;
    DenseMatrix q;
    double objective = 0.0;    // full prox objective at (P, Q)
    double cca_value = 0.0;    // L(P, Q)
    int iterations = 0;
    double residual = 0.0;     // max-norm of the projected gradient
};

namespace detail {

inline double prox_cca_objective(const DenseMatrix& p, const DenseMatrix& q, const DenseMatrix& x,
                                 const DenseMatrix& y, double lambda, double eps, std::size_t k, double* cca_out) {
    const double n = static_cast<double>(x.cols());
    const CcaObjective obj = cca_objective(p, q, eps, k);
    if (cca_out) *cca_out = obj.value;
    double dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        dx += (p.data()[i] - x.data()[i]) * (p.data()[i] - x.data()[i]);
        dy += (q.data()[i] - y.data()[i]) * (q.data()[i] - y.data()[i]);
    }
    return 0.5 * lambda / n * (dx + dy) + obj.value;
}

// Gradient descent with Armijo backtracking from (P, Q) = (X, Y) or a
// caller-supplied warm start. The row-mean component of the gradient is
// projected out so centered batches stay centered to machine precision.
inline ProxCcaResult prox_cca_solve(const CcaProxLayer& layer, const DenseMatrix& x, const DenseMatrix& y,
                                    double lambda, double grad_tol, const DenseMatrix* p0, const DenseMatrix* q0) {
    require_same_shape(x, y, "prox_cca");
    require_finite(x, "prox_cca");
    require_finite(y, "prox_cca");
    layer.validate(x.rows());
    if (lambda <= 0.0) throw std::invalid_argument("prox_cca: lambda must be positive");
    const double n = static_cast<double>(x.cols());

    ProxCcaResult result;
    result.p = p0 ? *p0 : x;
    result.q = q0 ? *q0 : y;
    double cca_val = 0.0;
    double f = prox_cca_objective(result.p, result.q, x, y, lambda, layer.eps, layer.k, &cca_val);
    double t = 1.0;
    for (int iter = 0; iter < layer.max_iters; ++iter) {
        auto [gl_p, gl_q] = cca_objective_grad(result.p, result.q, layer.eps, layer.k);
        DenseMatrix gp = center_columns(gl_p);
        DenseMatrix gq = center_columns(gl_q);
        for (std::size_t i = 0; i < gp.size(); ++i) {
            gp.data()[i] += lambda / n * (result.p.data()[i] - x.data()[i]);
            gq.data()[i] += lambda / n * (result.q.data()[i] - y.data()[i]);
        }
        result.residual = std::max(max_abs(gp), max_abs(gq));
        result.iterations = iter;
        if (result.residual <= grad_tol) {
            result.objective = f;
            result.cca_value = cca_val;
            return result;
        }
        const double g2 = frobenius_norm(gp) * frobenius_norm(gp) + frobenius_norm(gq) * frobenius_norm(gq);
        bool accepted = false;
        for (int bt = 0; bt < 80; ++bt) {
            DenseMatrix pn = result.p, qn = result.q;
            for (std::size_t i = 0; i < pn.size(); ++i) {
                pn.data()[i] -= t * gp.data()[i];
                qn.data()[i] -= t * gq.data()[i];
            }
            double cca_n = 0.0;
            const double fn = prox_cca_objective(pn, qn, x, y, lambda, layer.eps, layer.k, &cca_n);
            if (fn <= f - layer.armijo_c * t * g2) {
                result.p = std::move(pn);
                result.q = std::move(qn);
                f = fn;
                cca_val = cca_n;
                accepted = true;
                break;
            }
            t *= layer.shrink;
        }
        if (!accepted) {
            throw NumericalError("prox_cca: line search stalled at residual " + std::to_string(result.residual));
        }
        t = std::min(t * 1.5, 1e4);
    }
    throw NumericalError("prox_cca: no convergence after " + std::to_string(layer.max_iters) +
                         " iterations, residual " + std::to_string(result.residual));
}

}  // namespace detail

// argmin_{P,Q} (lambda/2n)||P - X||_F^2 + (lambda/2n)||Q - Y||_F^2 + L(P, Q).
inline ProxCcaResult prox_cca(const CcaProxLayer& layer, const DenseMatrix& x, const DenseMatrix& y, double lambda) {
    return detail::prox_cca_solve(layer, x, y, lambda, layer.grad_tol, nullptr, nullptr);
}

// Domke adjoint: one extra prox solve at the input nudged along the upstream
// gradient. Both solves run at backward_tol so the finite difference is not
// swamped by solver noise.
inline std::pair<DenseMatrix, DenseMatrix> prox_cca_backward(const CcaProxLayer& layer, const DenseMatrix& x,
                                                             const DenseMatrix& y, const DenseMatrix& dj_dp,
                                                             const DenseMatrix& dj_dq, double lambda,
                                                             const ProxCcaResult* warm = nullptr) {
    require_same_shape(dj_dp, x, "prox_cca_backward");
    require_same_shape(dj_dq, y, "prox_cca_backward");
    const double adj_scale = std::max({1.0, max_abs(dj_dp), max_abs(dj_dq)});
    if (max_abs(dj_dp) == 0.0 && max_abs(dj_dq) == 0.0) {
        return {DenseMatrix(x.rows(), x.cols()), DenseMatrix(y.rows(), y.cols())};
    }
    const double eps = layer.domke_eps_scale / adj_scale;

    CcaProxLayer tight = layer;
    tight.max_iters = std::max(layer.max_iters, 50000);
    const DenseMatrix* p0 = warm ? &warm->p : nullptr;
    const DenseMatrix* q0 = warm ? &warm->q : nullptr;
    const ProxCcaResult base = detail::prox_cca_solve(tight, x, y, lambda, layer.backward_tol, p0, q0);

    DenseMatrix xp = x, yp = y;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp.data()[i] += eps * dj_dp.data()[i];
        yp.data()[i] += eps * dj_dq.data()[i];
    }
    const ProxCcaResult pert = detail::prox_cca_solve(tight, xp, yp, lambda, layer.backward_tol, &base.p, &base.q);

    DenseMatrix dj_dx(x.rows(), x.cols()), dj_dy(y.rows(), y.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        dj_dx.data()[i] = (pert.p.data()[i] - base.p.data()[i]) / eps;
        dj_dy.data()[i] = (pert.q.data()[i] - base.q.data()[i]) / eps;
    }
    return {std::move(dj_dx), std::move(dj_dy)};
}

// Tape node for the prox layer. Value is [P; Q] stacked vertically; backward
// splits the upstream adjoint and applies the Domke difference.
inline Var prox_cca_node(Tape& tape, const CcaProxLayer& layer, Var x, Var y, double lambda) {
    const DenseMatrix xv = x.value(), yv = y.value();
    ProxCcaResult solved = prox_cca(layer, xv, yv, lambda);
    const std::size_t d = xv.rows(), n = xv.cols();
    DenseMatrix stacked(2 * d, n);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            stacked(i, j) = solved.p(i, j);
            stacked(d + i, j) = solved.q(i, j);
        }
    return tape.custom({x, y}, std::move(stacked),
                       [layer, xv, yv, lambda, solved = std::move(solved), d, n](const DenseMatrix& up) {
                           DenseMatrix dj_dp(d, n), dj_dq(d, n);
                           for (std::size_t i = 0; i < d; ++i)
                               for (std::size_t j = 0; j < n; ++j) {
                                   dj_dp(i, j) = up(i, j);
                                   dj_dq(i, j) = up(d + i, j);
                               }
                           auto [dx, dy] = prox_cca_backward(layer, xv, yv, dj_dp, dj_dq, lambda, &solved);
                           return std::vector<DenseMatrix>{std::move(dx), std::move(dy)};
                       });
}

// ---------------------------------------------------------------------------
// Generalized CCA for J >= 2 views (rows are examples here, matching the
// usual multiview convention): min sum_j ||G - X_j U_j||_F^2, G^T G = I.
// ---------------------------------------------------------------------------

struct GccaProblem {
    std::vector<DenseMatrix> views;  // X_j: N x d_j, centered per column
    std::size_t r = 1;
};

struct GccaResult {
    DenseMatrix g;                 // N x r, orthonormal columns
    std::vector<DenseMatrix> u;    // d_j x r
    double objective = 0.0;
};

inline GccaResult gcca_solve(const GccaProblem& problem) {
    if (problem.views.size() < 2) throw std::invalid_argument("gcca_solve: need at least 2 views");
    const std::size_t n = problem.views.front().rows();
    const double ridge = 1e-8;
    for (const DenseMatrix& v : problem.views) {
        if (v.rows() != n) throw std::invalid_argument("gcca_solve: views disagree on the number of examples");
        if (problem.r > v.cols()) throw std::invalid_argument("gcca_solve: r exceeds a view dimension");
    }
    if (problem.r == 0) throw std::invalid_argument("gcca_solve: r must be positive");

    DenseMatrix m(n, n);
    std::vector<Cholesky> factors;
    factors.reserve(problem.views.size());
    for (const DenseMatrix& v : problem.views) {
        DenseMatrix gram = matmul(transpose(v), v);
        for (std::size_t i = 0; i < v.cols(); ++i) gram(i, i) += ridge;
        factors.push_back(Cholesky::factor(gram));
        const DenseMatrix proj = matmul(v, factors.back().solve(transpose(v)));
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] += proj.data()[i];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = s;
            m(j, i) = s;
        }

    auto [evals, evecs] = sym_eig(m);
    if (evals[problem.r - 1] <= 1e-10 * std::max(1.0, evals[0])) {
        throw std::invalid_argument("gcca_solve: r exceeds the rank of the sum of view projectors");
    }
    GccaResult out;
    out.g = DenseMatrix(n, problem.r);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < problem.r; ++j) out.g(i, j) = evecs(i, j);
    out.objective = 0.0;
    for (std::size_t j = 0; j < problem.views.size(); ++j) {
        const DenseMatrix& v = problem.views[j];
        out.u.push_back(factors[j].solve(matmul(transpose(v), out.g)));
        const DenseMatrix resid = sub(out.g, matmul(v, out.u.back()));
        const double f = frobenius_norm(resid);
        out.objective += f * f;
    }
    return out;
}

}  // namespace proxkit
