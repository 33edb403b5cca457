#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ce {

// Deterministic xoshiro256** generator with a splitmix64-seeded state and a
// Box-Muller normal sampler. Self-contained so streams are reproducible across
// standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (int i = 0; i < 4; i++) s_[i] = splitmix64(x);
        has_spare_ = false;
        spare_ = 0.0;
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
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive (unbiased enough for toy use).
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Standard normal via Box-Muller, spare value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_spare_;
    double spare_;
};

// Splitting rule for per-stage / per-item streams: the child seed is the
// splitmix64 mix of the root seed with the FNV-1a hash of the tag. Stages and
// parallel items always derive their own stream from this function so reruns
// of any one stage are stable.
inline uint64_t derive_seed(uint64_t root, std::string_view tag) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    uint64_t x = root ^ h;
    return Rng::splitmix64(x);
}

inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index) {
    uint64_t x = derive_seed(root, tag) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return Rng::splitmix64(x);
}

}  // namespace ce
