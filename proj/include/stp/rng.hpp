#pragma once

#include <cstdint>

#include "stp/fixedpoint.hpp"

// Counter-based deterministic randomness: every word is a pure function of
// (seed, stream, index, slot), so a sample's value never depends on which
// worker produced it or in what order.

namespace stp {

// Stafford mix13 finalizer; full-avalanche bijection on 64 bits.
inline constexpr u64 mix64(u64 z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct RngKey {
    u64 seed{0};
    u64 stream{0};
};

inline u64 rng_word(RngKey key, u64 index, u64 slot = 0) {
    u64 h = mix64(key.seed + 0x9e3779b97f4a7c15ULL);
    h = mix64(h ^ (key.stream + 0xd1b54a32d192ed03ULL));
    h = mix64(h ^ (index + 0x8cb92ba72f3d8dd7ULL));
    h = mix64(h ^ (slot + 0xe7037ed1a0b428dbULL));
    return h;
}

inline u128 rng_wide(RngKey key, u64 index, u64 slot_base = 0) {
    return (u128{rng_word(key, index, slot_base)} << 64) | rng_word(key, index, slot_base + 1);
}

// Uniform on Z_{2^q}: top q bits of a 128-bit word (power-of-two range, unbiased).
inline UnitPoint sample_uniform(RngKey key, u64 index, int q, u64 slot_base = 0) {
    check_grid_bits(q);
    return UnitPoint(rng_wide(key, index, slot_base) >> (128 - q), q);
}

// Sequential view over the counter space, for setup code (shuffles, rejection
// sampling) where a fixed consumption order is itself the determinism contract.
class SequentialRng {
  public:
    SequentialRng(RngKey key, u64 index = 0) : key_(key), index_(index) {}

    u64 next_word() { return rng_word(key_, index_, slot_++); }

    u128 next_wide() {
        const u64 hi = next_word();
        const u64 lo = next_word();
        return (u128{hi} << 64) | lo;
    }

    // Uniform in [0, bound) by rejection on the top bits.
    u64 next_below(u64 bound) {
        if (bound == 0) throw std::invalid_argument("next_below: zero bound");
        const u64 limit = ~u64{0} - (~u64{0} % bound + 1) % bound;
        for (;;) {
            const u64 w = next_word();
            if (w <= limit) return w % bound;
        }
    }

    UnitPoint next_point(int q) {
        check_grid_bits(q);
        return UnitPoint(next_wide() >> (128 - q), q);
    }

  private:
    RngKey key_;
    u64 index_;
    u64 slot_{0};
};

}  // namespace stp
