#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace moedm::nk {

// Deterministic random stream. Gaussian draws use Box-Muller on explicit
// uniforms so sequences are bit-reproducible across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Independent substream: hash-mixes (seed, stream) so episode/worker
    // streams never overlap.
    static Rng stream(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + (stream << 1));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

    // Uniform in [0, 1).
    double uniform() {
        return double(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { // [0, n)
        return static_cast<int>(gen_() % static_cast<std::uint64_t>(n));
    }

    double normal() {
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

} // namespace moedm::nk
