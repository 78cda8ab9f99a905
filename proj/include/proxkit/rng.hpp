#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "proxkit/matrix.hpp"

namespace proxkit {

// SplitMix64 (Steele, Lea, Flood 2014). Effectively counter-based: the n-th
// output is a fixed mix of seed + n * 0x9E3779B97F4A7C15, so any language can
// reproduce the stream from the seed alone. Test vectors live in the README
// and in tests/test_rng.cpp.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1) with the top 53 bits.
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // Box-Muller, consuming exactly two draws per normal (no cached pair,
    // so the stream position stays a pure function of the call count).
    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Uniform integer in [0, n). Modulo bias is negligible for the desk-scale
    // ranges used here and keeps the mapping trivially portable.
    std::uint64_t next_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    DenseMatrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
        DenseMatrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = stddev * next_normal();
        return m;
    }

    DenseMatrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
        DenseMatrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = next_uniform(lo, hi);
        return m;
    }

    std::vector<double> normal_vector(std::size_t n, double stddev = 1.0) {
        std::vector<double> v(n);
        for (double& x : v) x = stddev * next_normal();
        return v;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace proxkit
