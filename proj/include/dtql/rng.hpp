#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "dtql/tensor.hpp"

namespace dtql {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ with hand-rolled distribution transforms so every draw is
// identical across compilers and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    // Independent stream derived from (seed, stream id).
    static Rng fork(uint64_t seed, uint64_t stream) {
        uint64_t sm = seed ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
        return Rng(splitmix64(sm));
    }

    uint64_t next() {
        auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return static_cast<int>(next() % static_cast<uint64_t>(n)); }

    // Box-Muller, no spare caching: two uniforms per draw keeps interleaved
    // use deterministic.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double logistic(double loc, double scale) {
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        if (u >= 1.0) u = 1.0 - 0x1.0p-53;
        return loc + scale * std::log(u / (1.0 - u));
    }

private:
    std::array<uint64_t, 4> s_{};
};

inline void fill_normal(Tensor& t, Rng& rng) {
    for (auto& x : t.v) x = rng.normal();
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    for (auto& x : t.v) x = rng.uniform(lo, hi);
}

}  // namespace dtql
