// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_RNG_HPP
#define SPAIR_RNG_HPP

#include <array>
#include <cstdint>

namespace spair {

// splitmix64 step. Used for seeding and for deriving independent child
// streams; the constants are the reference ones, so sequences can be
// reproduced in any language.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable child seed i of a master seed.
inline uint64_t derive_seed(uint64_t master, uint64_t i) {
    uint64_t s = master ^ (0x632be59bd9b4e019ull * (i + 1));
    return splitmix64(s);
}

// xoshiro256** seeded via splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). Modulo bias is negligible for the small n used here.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    int range(int lo, int hi) { return lo + int(below(uint64_t(hi - lo + 1))); }

    bool chance(double p) { return uniform() < p; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> s_;
};

} // namespace spair

#endif
