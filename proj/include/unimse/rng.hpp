#pragma once

// Deterministic random number generation.
//
// The standard <random> distributions are implementation-defined, so relying
// on them would make checkpoints and loss logs differ across standard library
// versions. Everything here is pinned: mt19937_64 for bits, explicit
// transforms for distributions.

#include <cstdint>
#include <random>
#include <vector>

#include "unimse/common.hpp"

namespace unimse {

// splitmix64: the recommended scrambler for seeding mt19937_64 from a small seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Per-component seed streams derived from one master seed by fixed offsets.
enum class SeedStream : std::uint64_t {
    init = 1,     // parameter initialization
    shuffle = 2,  // batch order
    synth = 3,    // synthetic data generation
    dropout = 4,  // stochastic graph ops
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream) {
    return splitmix64(master + static_cast<std::uint64_t>(stream));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
    // so the consumed stream length is a fixed function of the call count.
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) fail("Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    int range(int lo, int hi_inclusive) {
        if (hi_inclusive < lo) fail("Rng::range: empty range [", lo, ", ", hi_inclusive, "]");
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    // Fisher-Yates; deterministic given the seed and vector length.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

} // namespace unimse
