#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dronetune {

/// Deterministic random source. The mt19937_64 engine is fully specified by
/// the standard, and all distributions here are hand-derived from raw 64-bit
/// draws, so streams are bit-identical across standard library
/// implementations. Every randomized stage of the pipeline (init, shuffles,
/// dropout, augmentation draws, synthesis) derives its seed through mix().
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// splitmix64 step; chains seeds for substreams: mix(mix(seed, a), b).
    static std::uint64_t mix(std::uint64_t state, std::uint64_t salt) {
        std::uint64_t z = state + 0x9e3779b97f4a7c15ULL + salt;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; caches the paired draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n), rejection sampled (no modulo bias).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    /// Fisher-Yates (std::shuffle is implementation-defined).
    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = uniform_int(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace dronetune
