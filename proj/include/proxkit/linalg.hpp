#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/matrix.hpp"

namespace proxkit {

struct SvdResult {
    DenseMatrix u;               // m x r, orthonormal columns
    std::vector<double> sigma;   // length r, nonincreasing, nonnegative
    DenseMatrix vt;              // r x n, orthonormal rows
};

namespace detail {

// Orthonormal fill-in for columns whose singular value vanished. Candidates
// are standard basis vectors, projected against the columns already in u.
inline void complete_orthonormal_columns(DenseMatrix& u, std::size_t first_bad) {
    const std::size_t m = u.rows();
    const std::size_t r = u.cols();
    for (std::size_t j = first_bad; j < r; ++j) {
        for (std::size_t cand = 0; cand < m; ++cand) {
            std::vector<double> v(m, 0.0);
            v[cand] = 1.0;
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) proj += u(i, k) * v[i];
                for (std::size_t i = 0; i < m; ++i) v[i] -= proj * u(i, k);
            }
            double nrm = 0.0;
            for (double x : v) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) u(i, j) = v[i] / nrm;
                break;
            }
        }
    }
}

}  // namespace detail

// One-sided Jacobi SVD. Deterministic, accurate for the small dense matrices
// this library works with (up to a few hundred on a side).
inline SvdResult svd(const DenseMatrix& a) {
    require_finite(a, "svd");
    if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("svd: empty matrix");

    if (a.rows() < a.cols()) {
        SvdResult t = svd(transpose(a));
        // A^T = U S V^T  =>  A = V S U^T
        SvdResult out;
        out.u = transpose(t.vt);
        out.sigma = t.sigma;
        out.vt = transpose(t.u);
        return out;
    }

    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    DenseMatrix w = a;                       // columns get orthogonalized in place
    DenseMatrix v = DenseMatrix::identity(n);

    const double tol = 1e-15;
    const int max_sweeps = 100;
    bool converged = false;
    double last_off = 0.0;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        last_off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                if (app * aqq == 0.0) continue;
                last_off = std::max(last_off, std::abs(apq) / std::sqrt(app * aqq));
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                converged = false;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericalError("svd: one-sided Jacobi did not converge after 100 sweeps; worst column coherence " +
                             std::to_string(last_off) + " for " + shape_str(a));
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
        sigma[j] = std::sqrt(s);
    }

    // Stable sort keeps tie order deterministic.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

    SvdResult out;
    out.u = DenseMatrix(m, n);
    out.vt = DenseMatrix(n, n);
    out.sigma.resize(n);
    const double sig_max = sigma.empty() ? 0.0 : sigma[order[0]];
    std::size_t first_bad = n;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.sigma[j] = sigma[src];
        for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v(i, src);
        if (sigma[src] > sig_max * 1e-300 && sigma[src] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = w(i, src) / sigma[src];
        } else if (first_bad == n) {
            first_bad = j;
        }
    }
    if (first_bad < n) detail::complete_orthonormal_columns(out.u, first_bad);
    return out;
}

// Cyclic Jacobi eigendecomposition for symmetric matrices.
// Returns eigenvalues in descending order with matching eigenvector columns.
inline std::pair<std::vector<double>, DenseMatrix> sym_eig(const DenseMatrix& a) {
    require_finite(a, "sym_eig");
    const std::size_t n = a.rows();
    if (n != a.cols()) throw std::invalid_argument("sym_eig: matrix is not square, " + shape_str(a));
    const double sym_tol = 1e-10 * std::max(1.0, max_abs(a));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > sym_tol)
                throw std::invalid_argument("sym_eig: matrix is not symmetric (|a_ij - a_ji| = " +
                                            std::to_string(std::abs(a(i, j) - a(j, i))) + ")");

    DenseMatrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w(i, j) = 0.5 * (a(i, j) + a(j, i));
    DenseMatrix v = DenseMatrix::identity(n);

    const int max_sweeps = 100;
    const double scale = std::max(1.0, max_abs(w));
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(w(i, j)));
        if (off <= 1e-15 * scale) break;
        if (sweep == max_sweeps - 1) {
            throw NumericalError("sym_eig: Jacobi did not converge, off-diagonal " + std::to_string(off));
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = w(p, q);
                if (std::abs(apq) <= 1e-18 * scale) continue;
                const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double wkp = w(k, p), wkq = w(k, q);
                    w(k, p) = c * wkp - s * wkq;
                    w(k, q) = s * wkp + c * wkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double wpk = w(p, k), wqk = w(q, k);
                    w(p, k) = c * wpk - s * wqk;
                    w(q, k) = s * wpk + c * wqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<double> evals(n);
    for (std::size_t i = 0; i < n; ++i) evals[i] = w(i, i);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return evals[i] > evals[j]; });

    std::vector<double> sorted(n);
    DenseMatrix vectors(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        sorted[j] = evals[order[j]];
        for (std::size_t i = 0; i < n; ++i) vectors(i, j) = v(i, order[j]);
    }
    return {std::move(sorted), std::move(vectors)};
}

// (A + eps*I)^{-1/2} for symmetric PSD A. Eigenvalues in [-1e-8, 0] are
// treated as exact zeros (Gram matrices of centered data sit there at
// machine precision); anything more negative is rejected.
inline DenseMatrix inv_sqrt_psd(const DenseMatrix& a, double eps) {
    if (eps < 0.0) throw std::invalid_argument("inv_sqrt_psd: eps must be nonnegative");
    const double eps_eff = std::max(eps, 1e-12);
    auto [evals, vecs] = sym_eig(a);
    const std::size_t n = a.rows();
    for (double& lam : evals) {
        if (lam < -1e-8) throw std::invalid_argument("inv_sqrt_psd: negative eigenvalue " + std::to_string(lam));
        if (lam < 0.0) lam = 0.0;
    }
    DenseMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += vecs(i, k) * vecs(j, k) / std::sqrt(evals[k] + eps_eff);
            out(i, j) = s;
            out(j, i) = s;
        }
    }
    return out;
}

// A * (I - (1/n) 11^T): removes the mean of every row.
inline DenseMatrix center_columns(const DenseMatrix& a) {
    if (a.cols() == 0) throw std::invalid_argument("center_columns: no columns");
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) mean += a(i, j);
        mean /= static_cast<double>(a.cols());
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) - mean;
    }
    return out;
}

// Cholesky factorization of a symmetric positive definite matrix, kept
// around so one factorization can serve many right-hand sides.
class Cholesky {
public:
    static Cholesky factor(const DenseMatrix& a) {
        const std::size_t n = a.rows();
        if (n != a.cols()) throw std::invalid_argument("Cholesky: matrix is not square, " + shape_str(a));
        Cholesky f;
        f.l_ = DenseMatrix(n, n);
        for (std::size_t j = 0; j < n; ++j) {
            double d = a(j, j);
            for (std::size_t k = 0; k < n; ++k) {
                if (k < j) d -= f.l_(j, k) * f.l_(j, k);
            }
            if (d <= 0.0 || !std::isfinite(d)) {
                throw NumericalError("Cholesky: matrix not positive definite at pivot " + std::to_string(j) +
                                     " (value " + std::to_string(d) + ")");
            }
            f.l_(j, j) = std::sqrt(d);
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = a(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= f.l_(i, k) * f.l_(j, k);
                f.l_(i, j) = s / f.l_(j, j);
            }
        }
        return f;
    }

    std::size_t dim() const { return l_.rows(); }

    // Solves A x = b for each column of b.
    DenseMatrix solve(const DenseMatrix& b) const {
        const std::size_t n = l_.rows();
        if (b.rows() != n) throw std::invalid_argument("Cholesky::solve: rhs has " + shape_str(b));
        DenseMatrix x = b;
        for (std::size_t col = 0; col < b.cols(); ++col) {
            for (std::size_t i = 0; i < n; ++i) {
                double s = x(i, col);
                for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * x(k, col);
                x(i, col) = s / l_(i, i);
            }
            for (std::size_t ii = n; ii-- > 0;) {
                double s = x(ii, col);
                for (std::size_t k = ii + 1; k < n; ++k) s -= l_(k, ii) * x(k, col);
                x(ii, col) = s / l_(ii, ii);
            }
        }
        return x;
    }

private:
    DenseMatrix l_;
};

inline DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b) {
    return Cholesky::factor(a).solve(b);
}

}  // namespace proxkit
