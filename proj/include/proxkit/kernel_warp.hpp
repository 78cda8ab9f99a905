#pragma once

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "proxkit/linalg.hpp"
#include "proxkit/matrix.hpp"

namespace proxkit {

// Gaussian kernel k(x, y) = exp(-gamma ||x - y||^2) over rows of a point matrix.
inline double gauss_kernel(const DenseMatrix& pts_a, std::size_t i, const DenseMatrix& pts_b, std::size_t j,
                           double gamma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < pts_a.cols(); ++k) {
        const double d = pts_a(i, k) - pts_b(j, k);
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

// 1 / median of pairwise squared distances; the usual bandwidth default when
// nothing else is known about the data.
inline double median_heuristic_gamma(const DenseMatrix& points) {
    const std::size_t n = points.rows();
    if (n < 2) throw std::invalid_argument("median_heuristic_gamma: need at least 2 points");
    std::vector<double> d2;
    d2.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < points.cols(); ++k) {
                const double d = points(i, k) - points(j, k);
                s += d * d;
            }
            d2.push_back(s);
        }
    std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
    const double med = d2[d2.size() / 2];
    if (med <= 0.0) throw std::invalid_argument("median_heuristic_gamma: degenerate point set");
    return 1.0 / med;
}

// Finite-dimensional coordinates for RKHS elements through p landmark points:
// f maps to K_W^{-1/2} (f(w_1), ..., f(w_p)).
struct NystromMap {
    DenseMatrix landmarks;     // p x dim
    double gamma = 1.0;
    DenseMatrix k_w_inv_sqrt;  // p x p

    static NystromMap build(DenseMatrix landmarks, double gamma) {
        if (gamma <= 0.0) throw std::invalid_argument("NystromMap: kernel bandwidth gamma must be positive");
        if (landmarks.rows() == 0) throw std::invalid_argument("NystromMap: no landmarks");
        const std::size_t p = landmarks.rows();
        DenseMatrix kw(p, p);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = i; j < p; ++j) {
                const double v = gauss_kernel(landmarks, i, landmarks, j, gamma);
                kw(i, j) = v;
                kw(j, i) = v;
            }
        NystromMap map;
        map.k_w_inv_sqrt = inv_sqrt_psd(kw, 1e-8);  // ridge guards duplicate landmarks
        map.landmarks = std::move(landmarks);
        map.gamma = gamma;
        return map;
    }

    std::size_t dim() const { return landmarks.rows(); }
};

// Embedding of the representer k(x, .): K_W^{-1/2} (k(x, w_1), ..., k(x, w_p)).
inline std::vector<double> nystrom_embed(const NystromMap& map, const std::vector<double>& x) {
    const std::size_t p = map.dim();
    if (x.size() != map.landmarks.cols()) {
        throw std::invalid_argument("nystrom_embed: point dimension mismatch");
    }
    std::vector<double> kx(p);
    for (std::size_t i = 0; i < p; ++i) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double d = x[k] - map.landmarks(i, k);
            d2 += d * d;
        }
        kx[i] = std::exp(-map.gamma * d2);
    }
    std::vector<double> out(p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) out[i] += map.k_w_inv_sqrt(i, j) * kx[j];
    return out;
}

// Rows of `points` embedded one per row: n x p.
inline DenseMatrix nystrom_embed_all(const NystromMap& map, const DenseMatrix& points) {
    DenseMatrix out(points.rows(), map.dim());
    std::vector<double> x(points.cols());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        for (std::size_t k = 0; k < points.cols(); ++k) x[k] = points(i, k);
        const std::vector<double> e = nystrom_embed(map, x);
        for (std::size_t j = 0; j < e.size(); ++j) out(i, j) = e[j];
    }
    return out;
}

// Columns are the embedded representers z_i of the penalized linear
// functionals; the regularizer in embedded coordinates is sum_i <z_i, v>^2.
struct InvarianceSet {
    DenseMatrix z_tilde;  // p x m

    std::size_t count() const { return z_tilde.cols(); }
};

// One column per (anchor point, input coordinate): the representer of
// f -> d f / d x_j at the anchor. For the Gaussian kernel,
// d k(x, w) / d x_j = -2 gamma (x_j - w_j) k(x, w).
inline InvarianceSet gradient_representers(const NystromMap& map, const DenseMatrix& anchors) {
    if (anchors.rows() == 0) throw std::invalid_argument("gradient_representers: no anchors");
    if (anchors.cols() != map.landmarks.cols()) {
        throw std::invalid_argument("gradient_representers: anchor dimension mismatch");
    }
    const std::size_t p = map.dim();
    const std::size_t dim = anchors.cols();
    DenseMatrix raw(p, anchors.rows() * dim);
    for (std::size_t a = 0; a < anchors.rows(); ++a) {
        for (std::size_t w = 0; w < p; ++w) {
            const double kv = gauss_kernel(anchors, a, map.landmarks, w, map.gamma);
            for (std::size_t j = 0; j < dim; ++j) {
                raw(w, a * dim + j) = -2.0 * map.gamma * (anchors(a, j) - map.landmarks(w, j)) * kv;
            }
        }
    }
    return InvarianceSet{matmul(map.k_w_inv_sqrt, raw)};
}

// One column per edge: sqrt(w_ij) (phi(x_i) - phi(x_j)), so the summed squared
// inner products with an embedded f reproduce the graph-Laplacian penalty.
struct GraphEdge {
    std::size_t i;
    std::size_t j;
    double weight;
};

inline InvarianceSet laplacian_representers(const NystromMap& map, const std::vector<GraphEdge>& edges,
                                            const DenseMatrix& points) {
    const DenseMatrix phi = nystrom_embed_all(map, points);
    DenseMatrix z(map.dim(), edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const GraphEdge& edge = edges[e];
        if (edge.weight < 0.0) throw std::invalid_argument("laplacian_representers: negative edge weight");
        if (edge.i >= points.rows() || edge.j >= points.rows()) {
            throw std::invalid_argument("laplacian_representers: edge endpoint out of range");
        }
        const double w = std::sqrt(edge.weight);
        for (std::size_t r = 0; r < map.dim(); ++r) z(r, e) = w * (phi(edge.i, r) - phi(edge.j, r));
    }
    return InvarianceSet{std::move(z)};
}

// ---------------------------------------------------------------------------
// Warped proximal maps: (I + Z Z^T)^{-1} phi and (I + Z Z^T)^{-1/2} phi.
// ---------------------------------------------------------------------------

inline std::vector<double> warp_prox_direct(const InvarianceSet& z, const std::vector<double>& phi) {
    const std::size_t p = z.z_tilde.rows();
    if (phi.size() != p) throw std::invalid_argument("warp_prox: embedded vector has wrong length");
    DenseMatrix m = DenseMatrix::identity(p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < z.count(); ++k) s += z.z_tilde(i, k) * z.z_tilde(j, k);
            m(i, j) += s;
        }
    return solve_spd(m, DenseMatrix::column(phi)).to_vector();
}

inline std::vector<double> warp_prox_woodbury(const InvarianceSet& z, const std::vector<double>& phi) {
    const std::size_t p = z.z_tilde.rows();
    const std::size_t m = z.count();
    if (phi.size() != p) throw std::invalid_argument("warp_prox: embedded vector has wrong length");
    if (m == 0) return phi;
    DenseMatrix inner = DenseMatrix::identity(m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < p; ++k) s += z.z_tilde(k, i) * z.z_tilde(k, j);
            inner(i, j) += s;
        }
    const DenseMatrix ztphi = matmul(transpose(z.z_tilde), DenseMatrix::column(phi));
    const DenseMatrix core = solve_spd(inner, ztphi);
    const DenseMatrix corr = matmul(z.z_tilde, core);
    std::vector<double> out = phi;
    for (std::size_t i = 0; i < p; ++i) out[i] -= corr(i, 0);
    return out;
}

inline std::vector<double> warp_prox(const InvarianceSet& z, const std::vector<double>& phi) {
    if (z.count() == 0) return phi;
    return z.count() < z.z_tilde.rows() ? warp_prox_woodbury(z, phi) : warp_prox_direct(z, phi);
}

// Batch variant sharing one factorization: rows of `phis` are embedded points.
inline DenseMatrix warp_prox_batch(const InvarianceSet& z, const DenseMatrix& phis) {
    const std::size_t p = z.z_tilde.rows();
    if (phis.cols() != p) throw std::invalid_argument("warp_prox_batch: embedded width mismatch");
    if (z.count() == 0) return phis;
    DenseMatrix m = matmul(z.z_tilde, transpose(z.z_tilde));
    for (std::size_t i = 0; i < p; ++i) m(i, i) += 1.0;
    const Cholesky f = Cholesky::factor(m);
    return transpose(f.solve(transpose(phis)));
}

// Kernel-warping variant with exponent -1/2; the two maps act on each
// eigenvector of Z Z^T with factors (1+mu)^{-1} and (1+mu)^{-1/2}.
inline std::vector<double> warp_prox_sqrt(const InvarianceSet& z, const std::vector<double>& phi) {
    const std::size_t p = z.z_tilde.rows();
    if (phi.size() != p) throw std::invalid_argument("warp_prox_sqrt: embedded vector has wrong length");
    if (z.count() == 0) return phi;
    const DenseMatrix zzt = matmul(z.z_tilde, transpose(z.z_tilde));
    auto [mu, vecs] = sym_eig(zzt);
    std::vector<double> coeff(p, 0.0);
    for (std::size_t k = 0; k < p; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < p; ++i) s += vecs(i, k) * phi[i];
        coeff[k] = s / std::sqrt(1.0 + std::max(mu[k], 0.0));
    }
    std::vector<double> out(p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < p; ++k) out[i] += vecs(i, k) * coeff[k];
    return out;
}

inline double warped_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("warped_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Top-2 principal component scores of the rows of `outputs` (points stored
// one per row, centered over points). Rank-1 data yields a near-zero second
// column; only structurally impossible inputs are rejected.
inline DenseMatrix kpca_top2(const DenseMatrix& outputs) {
    const std::size_t n = outputs.rows();
    if (n < 3) throw std::invalid_argument("kpca_top2: need at least 3 points");
    if (outputs.cols() < 2) throw std::invalid_argument("kpca_top2: need at least 2 feature dimensions");
    DenseMatrix centered = outputs;
    for (std::size_t j = 0; j < outputs.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += outputs(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) centered(i, j) -= mean;
    }
    const SvdResult s = svd(centered);
    if (s.sigma[0] <= 0.0) throw std::invalid_argument("kpca_top2: zero-variance point cloud has rank < 2");
    DenseMatrix scores(n, 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 2; ++c) scores(i, c) = s.u(i, c) * s.sigma[c];
    return scores;
}

}  // namespace proxkit
