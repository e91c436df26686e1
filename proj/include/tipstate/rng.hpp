// Deterministic random numbers.
//
// All stochastic steps in the pipeline draw from Rng so that a (seed, data)
// pair reproduces bit-exactly on any platform. std::mt19937_64 is fully
// specified by the standard; the float mappings below are ours because the
// standard distributions are implementation-defined.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace tipstate {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be >= 1.
    std::uint64_t index(std::uint64_t n) {
        // Rejection sampling keeps the distribution exactly uniform.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = bits();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller. Draws two words per call.
    double normal() {
        const double u1 = static_cast<double>((bits() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    bool coin() { return (bits() & 1u) != 0; }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// SplitMix64 finalizer; good avalanche for combining seed material.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a over a string, folded into a running seed.
inline std::uint64_t hash_combine(std::uint64_t seed, std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return mix64(h);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
    return mix64(seed ^ mix64(v));
}

// Per-item seed for parallel schedules: hash(global seed, item id, index).
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view item_id,
                                 std::uint64_t idx) {
    return hash_combine(hash_combine(global_seed, item_id), idx);
}

}  // namespace tipstate
