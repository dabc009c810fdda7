#pragma once
#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace evr {

// Deterministic RNG. mt19937_64 output is pinned by the standard, but the
// std distributions are not, so we derive uniforms/normals from raw bits
// ourselves to get bit-identical streams across compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive, via rejection (unbiased).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = std::uint64_t(hi - lo) + 1;
        if (span == 0) return std::int64_t(eng_()); // full 64-bit range
        std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % span);
        std::uint64_t x;
        do { x = eng_(); } while (x >= limit);
        return lo + std::int64_t(x % span);
    }

    // Standard normal via Box-Muller (deterministic, one cached value).
    double normal() {
        if (has_cached_) { has_cached_ = false; return cached_; }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Sample an index from unnormalized non-negative weights.
    int choice(const std::vector<double>& w) {
        double total = 0;
        for (double x : w) total += x;
        double u = uniform() * total;
        double acc = 0;
        for (size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc) return int(i);
        }
        return int(w.size()) - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(uniform_int(0, std::int64_t(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// splitmix64 step; used to derive independent sub-seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace evr
