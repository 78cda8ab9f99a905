#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/matrix.hpp"
#include "proxkit/rng.hpp"
#include "proxkit/sequence_classifier.hpp"

namespace proxkit {

constexpr double kPi = 3.14159265358979323846;

struct TwoMoonData {
    DenseMatrix points;           // n x 2
    std::vector<int> labels;      // +1 first moon, -1 second moon
    std::size_t labeled_pos = 0;  // leftmost point of moon +1
    std::size_t labeled_neg = 0;  // leftmost point of moon -1
};

// Two interleaved half-circles, one labeled point per moon (leftmost rule).
// First moon: unit circle centered at the origin, upper half. Second moon:
// unit circle centered at (1, 0.5), lower half.
inline TwoMoonData gen_twomoon(std::size_t n, double noise, std::uint64_t seed) {
    if (n < 10) throw std::invalid_argument("gen_twomoon: need n >= 10");
    SplitMix64 rng(seed);
    const std::size_t n_pos = n / 2;
    TwoMoonData data;
    data.points = DenseMatrix(n, 2);
    data.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = i < n_pos;
        const double t = kPi * rng.next_uniform();
        double x = std::cos(t), y = std::sin(t);
        if (!pos) {
            x = 1.0 - x;
            y = 0.5 - y;
        }
        data.points(i, 0) = x + noise * rng.next_normal();
        data.points(i, 1) = y + noise * rng.next_normal();
        data.labels[i] = pos ? 1 : -1;
    }
    bool seen_pos = false, seen_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (data.labels[i] > 0) {
            if (!seen_pos || data.points(i, 0) < data.points(data.labeled_pos, 0)) data.labeled_pos = i;
            seen_pos = true;
        } else {
            if (!seen_neg || data.points(i, 0) < data.points(data.labeled_neg, 0)) data.labeled_neg = i;
            seen_neg = true;
        }
    }
    return data;
}

struct MultiviewConfig {
    std::size_t n = 300;
    std::size_t d_latent = 4;
    std::size_t d_obs = 8;
    double noise_x = 0.1;
    double noise_y = 0.1;
    std::size_t classes = 3;
    double separation = 4.0;  // distance between class means, in latent sigmas
    bool shared_maps = false; // use the same observation maps for both views
};

struct MultiviewData {
    DenseMatrix x;                  // d_obs x n (columns are examples)
    DenseMatrix y;                  // d_obs x n
    DenseMatrix latent;             // d_latent x n
    std::vector<std::size_t> labels;
};

// Shared class-conditional latent, two noisy nonlinear observations:
// x = A tanh(B z) + e_x, y = C tanh(D z) + e_y. All randomness (class means,
// observation maps, noise) derives from the single seed.
inline MultiviewData gen_synthetic_multiview(const MultiviewConfig& cfg, std::uint64_t seed) {
    if (cfg.classes < 2) throw std::invalid_argument("gen_synthetic_multiview: need at least 2 classes");
    SplitMix64 rng(seed);

    std::vector<DenseMatrix> means;
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        DenseMatrix dir = rng.normal_matrix(cfg.d_latent, 1);
        const double nrm = frobenius_norm(dir);
        means.push_back(scale(dir, 0.5 * cfg.separation / std::max(nrm, 1e-12)));
    }
    const DenseMatrix a = rng.normal_matrix(cfg.d_obs, cfg.d_latent, 1.0 / std::sqrt(double(cfg.d_latent)));
    const DenseMatrix b = rng.normal_matrix(cfg.d_latent, cfg.d_latent, 1.0 / std::sqrt(double(cfg.d_latent)));
    const DenseMatrix c = cfg.shared_maps ? a : rng.normal_matrix(cfg.d_obs, cfg.d_latent, 1.0 / std::sqrt(double(cfg.d_latent)));
    const DenseMatrix d = cfg.shared_maps ? b : rng.normal_matrix(cfg.d_latent, cfg.d_latent, 1.0 / std::sqrt(double(cfg.d_latent)));

    MultiviewData data;
    data.x = DenseMatrix(cfg.d_obs, cfg.n);
    data.y = DenseMatrix(cfg.d_obs, cfg.n);
    data.latent = DenseMatrix(cfg.d_latent, cfg.n);
    data.labels.resize(cfg.n);
    DenseMatrix z(cfg.d_latent, 1);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const std::size_t cls = i % cfg.classes;
        data.labels[i] = cls;
        for (std::size_t r = 0; r < cfg.d_latent; ++r) z(r, 0) = means[cls](r, 0) + rng.next_normal();
        for (std::size_t r = 0; r < cfg.d_latent; ++r) data.latent(r, i) = z(r, 0);
        DenseMatrix bz = matmul(b, z);
        DenseMatrix dz = matmul(d, z);
        for (std::size_t r = 0; r < cfg.d_latent; ++r) {
            bz(r, 0) = std::tanh(bz(r, 0));
            dz(r, 0) = std::tanh(dz(r, 0));
        }
        const DenseMatrix xv = matmul(a, bz);
        const DenseMatrix yv = matmul(c, dz);
        for (std::size_t r = 0; r < cfg.d_obs; ++r) {
            data.x(r, i) = xv(r, 0) + cfg.noise_x * rng.next_normal();
            data.y(r, i) = yv(r, 0) + cfg.noise_y * rng.next_normal();
        }
    }
    return data;
}

struct SequenceTaskConfig {
    std::size_t n = 1000;
    std::size_t length = 30;
    std::size_t vocab = 3;
    double corruption = 0.5;   // stddev of the Gaussian noise on one-hot inputs
    double token_bias = 0.6;   // probability of emitting the label token
};

// Noisy-majority-token task: the label is the majority token of the clean
// sequence; the model sees one-hot encodings corrupted by Gaussian noise.
// Sequences are re-drawn until the majority matches the intended label, so
// classes stay balanced by construction.
inline std::vector<LabeledSequence> gen_sequences(const SequenceTaskConfig& cfg, std::uint64_t seed) {
    if (cfg.vocab < 2) throw std::invalid_argument("gen_sequences: vocab must be >= 2");
    if (cfg.length == 0) throw std::invalid_argument("gen_sequences: empty sequences");
    SplitMix64 rng(seed);
    std::vector<LabeledSequence> out;
    out.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const std::size_t label = i % cfg.vocab;
        std::vector<std::size_t> tokens(cfg.length);
        bool have_majority = false;
        for (int attempt = 0; attempt < 1000 && !have_majority; ++attempt) {
            std::vector<std::size_t> counts(cfg.vocab, 0);
            for (std::size_t t = 0; t < cfg.length; ++t) {
                if (rng.next_uniform() < cfg.token_bias) {
                    tokens[t] = label;
                } else {
                    tokens[t] = static_cast<std::size_t>(rng.next_index(cfg.vocab));
                }
                ++counts[tokens[t]];
            }
            have_majority = true;
            for (std::size_t v = 0; v < cfg.vocab; ++v)
                if (v != label && counts[v] >= counts[label]) have_majority = false;
        }
        if (!have_majority) {
            throw NumericalError("gen_sequences: could not realize the intended majority token");
        }
        LabeledSequence seq;
        seq.label = label;
        seq.steps.reserve(cfg.length);
        for (std::size_t t = 0; t < cfg.length; ++t) {
            DenseMatrix x(cfg.vocab, 1);
            x(tokens[t], 0) = 1.0;
            for (std::size_t v = 0; v < cfg.vocab; ++v) x(v, 0) += cfg.corruption * rng.next_normal();
            seq.steps.push_back(std::move(x));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace proxkit
