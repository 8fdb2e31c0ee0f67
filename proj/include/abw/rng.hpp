#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "abw/common.hpp"

namespace abw {

// Seeding discipline: one root seed, every consumer gets its own stream
// derived from (root, module name, index). Streams are mt19937_64 so the
// bit sequence is identical on every platform; all distributions below are
// implemented here rather than via std::*_distribution, whose algorithms
// are implementation-defined.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t root, std::string_view module, uint64_t index) {
    uint64_t h = splitmix64(root);
    h = splitmix64(h ^ fnv1a(module));
    h = splitmix64(h ^ index);
    return h;
}

class RngStream {
  public:
    explicit RngStream(uint64_t seed) : gen_(seed) {}

    static RngStream derive(uint64_t root, std::string_view module, uint64_t index = 0) {
        return RngStream(derive_seed(root, module, index));
    }

    uint64_t next_u64() { return gen_(); }

    // Uniform on (0,1): 53-bit mantissa, zero excluded so log() is safe.
    double uniform() {
        double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // One integer in [0, n).
    uint64_t uniform_index(uint64_t n) {
        require(n > 0, "uniform_index: n must be positive");
        // rejection sampling to avoid modulo bias
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double half_normal(double sd) { return std::fabs(normal()) * sd; }

    double truncated_normal(double mean, double sd, double lo, double hi) {
        require(lo < hi, "truncated_normal: empty interval");
        for (int i = 0; i < 100000; ++i) {
            double x = normal(mean, sd);
            if (x >= lo && x <= hi) return x;
        }
        throw NumericFailure("truncated_normal: rejection sampling failed");
    }

    // Marsaglia-Tsang; shape boost for alpha < 1.
    double gamma(double shape, double scale = 1.0) {
        require(shape > 0.0 && scale > 0.0, "gamma: shape and scale must be positive");
        if (shape < 1.0) {
            double u = uniform();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v * scale;
        }
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

    // Exact for the small n used here (n <= a few hundred).
    int binomial(int n, double p) {
        require(n >= 0 && p >= 0.0 && p <= 1.0, "binomial: invalid arguments");
        int k = 0;
        for (int i = 0; i < n; ++i)
            if (uniform() < p) ++k;
        return k;
    }

    std::vector<double> normal_vector(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    // Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

  private:
    std::mt19937_64 gen_;
};

// Van der Corput base-2 sequence; halton_jitter(i) lies in (0,1) for i >= 0.
inline double halton_jitter(uint64_t i) {
    uint64_t n = i + 1;
    double x = 0.0, f = 0.5;
    while (n > 0) {
        x += f * static_cast<double>(n & 1);
        n >>= 1;
        f *= 0.5;
    }
    return x;
}

}  // namespace abw
