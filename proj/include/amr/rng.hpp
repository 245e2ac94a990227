#pragma once

#include <cmath>
#include <cstdint>

namespace amr {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// One-shot mix of a value (splitmix64 without threading the state through).
inline uint64_t mix64(uint64_t x) { return splitmix64(x); }

// xoshiro256** seeded via splitmix64. Self-contained so that generated
// streams are identical across compilers and standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    // Independent stream for a sub-task (frame, parameter, epoch...).
    static Rng derive(uint64_t seed, uint64_t stream) {
        uint64_t sm = seed;
        uint64_t a = splitmix64(sm);
        sm = stream ^ 0xd1b54a32d192ed03ULL;
        uint64_t b = splitmix64(sm);
        return Rng(a ^ (b * 0x2545f4914f6cdd1dULL));
    }

    uint64_t next_u64() {
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
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
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) {
        // rejection sampling keeps the draw unbiased
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // Truncated normal: resample until |x| <= bound (bound in std units of 'std').
    double truncated_normal(double std, double bound) {
        if (std <= 0.0) return 0.0;
        double x = normal(0.0, std);
        while (std::fabs(x) > bound) x = normal(0.0, std);
        return x;
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

}  // namespace amr
