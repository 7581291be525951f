#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace difac {

// Deterministic random helpers built on raw std::mt19937_64 draws.  The
// engine itself is pinned by the standard; the library distributions are
// not, so uniform/normal/shuffle are derived here by hand and reproduce
// bit-identically across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform double in [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) without modulo bias (rejection sampling).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = n * (UINT64_MAX / n);
        std::uint64_t x;
        do { x = gen_(); } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; draws two uniforms per call so the
    // stream stays stateless between calls.
    double normal() {
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // In-place Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        if (k > n) k = n;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(below(n - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    // Random permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n) { return sample_indices(n, n); }

private:
    std::mt19937_64 gen_;
};

} // namespace difac
