#pragma once

#include <cmath>
#include <cstdint>

namespace hemis {

/// Deterministic counter-based generator (splitmix64 finalizer over an
/// incrementing counter). The same seed yields the same sequence on every
/// platform; the generator is a single-owner object and is never shared
/// between threads. Independent streams are obtained with fork().
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(seed) {}

    std::uint64_t next_u64() {
        counter_ += 0x9e3779b97f4a7c15ULL;
        return mix64(counter_);
    }

    /// Uniform in [0, 1), 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n) via 128-bit multiply-shift. n must be > 0.
    std::uint64_t uniform_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal deviate (Box-Muller, cosine branch).
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    /// Generator for an independent stream derived from the original seed,
    /// e.g. one stream per case or per model. Independent of how many values
    /// this generator has already produced.
    Rng fork(std::uint64_t stream) const {
        return Rng(mix64(seed_ + (stream + 1) * 0xd1342543de82ef95ULL));
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace hemis
