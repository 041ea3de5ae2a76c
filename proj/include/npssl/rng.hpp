#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace npssl {

/// SplitMix64 mix step; used to derive well-separated substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic seeded generator. All randomness in the library flows
/// through this wrapper; there is no global RNG state. Substreams are
/// derived by mixing (seed, stream ids) so that skipping one consumer
/// never shifts the draws of another.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Independent substream for (seed, a) or (seed, a, b).
    static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return Rng(splitmix64(splitmix64(seed ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        // Modulo bias is irrelevant at 64-bit width for desk-scale n.
        return static_cast<std::size_t>(engine_() % n);
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard the log; uniform() can return exactly 0.
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal();
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace npssl
