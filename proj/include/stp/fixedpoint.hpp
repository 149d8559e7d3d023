#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

// Exact arithmetic on the quantized circle Z_{2^Q}, Q bits per turn.
// A point k stands for k/2^Q in [0,1); all piecewise-translation dynamics
// are integer adds mod 2^Q, so no rounding ever occurs after construction.

namespace stp {

using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;
using u128 = unsigned __int128;

// The library itself accepts any q in [1,128]; experiment configs are
// validated to the narrower [16,128] range at the CLI layer.
inline constexpr int kMinGridBits = 1;
inline constexpr int kMaxGridBits = 128;
inline constexpr int kDefaultGridBits = 64;

inline constexpr u128 grid_mask(int q) {
    return q >= 128 ? ~u128{0} : ((u128{1} << q) - 1);
}

// 2^q as u128; valid only for q < 128.
inline constexpr u128 grid_size(int q) { return u128{1} << q; }

inline void check_grid_bits(int q) {
    if (q < kMinGridBits || q > kMaxGridBits)
        throw std::invalid_argument("grid bits out of range [1,128]: " + std::to_string(q));
}

std::string to_hex(u128 v);

struct Radius;

// A point of the quantized circle: k/2^q with 0 <= k < 2^q.
struct UnitPoint {
    u128 k{0};
    u32 q{kDefaultGridBits};

    UnitPoint() = default;
    UnitPoint(u128 k_, int q_) : k(k_ & grid_mask(q_)), q(static_cast<u32>(q_)) {
        check_grid_bits(q_);
    }


    double value() const { return static_cast<double>(k) * std::exp2(-static_cast<double>(q)); }

    friend bool operator==(UnitPoint a, UnitPoint b) { return a.k == b.k && a.q == b.q; }
    friend bool operator!=(UnitPoint a, UnitPoint b) { return !(a == b); }
};

inline void check_same_grid(UnitPoint a, UnitPoint b) {
    if (a.q != b.q)
        throw std::invalid_argument("mixed grid bits: " + std::to_string(a.q) + " vs " +
                                    std::to_string(b.q));
}

inline UnitPoint operator+(UnitPoint a, UnitPoint b) {
    check_same_grid(a, b);
    return UnitPoint((a.k + b.k) & grid_mask(a.q), a.q);
}

inline UnitPoint operator-(UnitPoint a, UnitPoint b) {
    check_same_grid(a, b);
    return UnitPoint((a.k - b.k) & grid_mask(a.q), a.q);
}

// A ball radius r/2^q with r <= 2^(q-1): a ball never covers more than the circle.
struct Radius {
    u128 r{0};
    u32 q{kDefaultGridBits};

    Radius() = default;
    Radius(u128 r_, int q_) : r(r_), q(static_cast<u32>(q_)) {
        check_grid_bits(q_);
        if (q_ < 128 && r_ > (u128{1} << (q_ - 1)))
            throw std::invalid_argument("radius exceeds half circle");
        if (q_ == 128 && r_ > (u128{1} << 127))
            throw std::invalid_argument("radius exceeds half circle");
    }

    double value() const { return static_cast<double>(r) * std::exp2(-static_cast<double>(q)); }

    friend bool operator==(Radius a, Radius b) { return a.r == b.r && a.q == b.q; }
    friend bool operator<=(Radius a, Radius b) {
        check_same_grid_radius(a, b);
        return a.r <= b.r;
    }

    static void check_same_grid_radius(Radius a, Radius b) {
        if (a.q != b.q) throw std::invalid_argument("mixed grid bits in radii");
    }
};

// Raw-word circle distance; both arguments already reduced mod 2^q.
inline u128 circle_distance_raw(u128 a, u128 b, int q) {
    const u128 m = grid_mask(q);
    const u128 d1 = (a - b) & m;
    const u128 d2 = (b - a) & m;
    return d1 < d2 ? d1 : d2;
}

// min(|a-b|, 2^q - |a-b|): the arc-length metric, symmetric, triangle inequality.
inline Radius circle_distance(UnitPoint a, UnitPoint b) {
    check_same_grid(a, b);
    return Radius(circle_distance_raw(a.k, b.k, a.q), a.q);
}

// floor(x * 2^q) for real x in [0,1), deterministic round-toward-zero.
// Exact: x is split into mantissa*2^exp and shifted, never multiplied in floating point.
inline UnitPoint quantize(double x, int q) {
    check_grid_bits(q);
    if (!(x >= 0.0) || x >= 1.0) throw std::domain_error("quantize: x outside [0,1)");
    if (x == 0.0) return UnitPoint(0, q);
    int e = 0;
    const double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5,1), e <= 0
    const u64 m53 = static_cast<u64>(std::ldexp(m, 53));
    const int shift = q + e - 53;
    u128 k;
    if (shift >= 0)
        k = u128{m53} << shift;
    else if (shift > -64)
        k = u128{m53 >> (-shift)};
    else
        k = 0;
    return UnitPoint(k, q);
}

// floor(num * 2^q / den) plus exactness flag, for num/den < 1 with num, den < 2^64.
// Decomposed as num*(2^q div den) + num*(2^q mod den)/den so q=128 cannot overflow.
struct QuantizedFraction {
    u128 value;
    bool exact;
};

inline QuantizedFraction quantize_fraction(u128 num, u128 den, int q) {
    check_grid_bits(q);
    if (den == 0) throw std::domain_error("quantize_fraction: zero denominator");
    if (num >= den) throw std::domain_error("quantize_fraction: fraction not below 1");
    if (num == 0) return {0, true};
    u128 div_q, mod_q;
    if (q < 128) {
        const u128 p = u128{1} << q;
        div_q = p / den;
        mod_q = p % den;
    } else {
        const u128 t = ~u128{0};  // 2^128 - 1
        const u128 r0 = t % den;
        div_q = t / den + (r0 + 1 == den ? 1 : 0);
        mod_q = (r0 + 1 == den) ? 0 : r0 + 1;
    }
    const u128 hi = num * div_q;
    const u128 rest = num * mod_q;  // < num*den, caller keeps both below 2^64
    return {hi + rest / den, rest % den == 0};
}

inline std::string to_hex(u128 v) {
    if (v == 0) return "0x0";
    char buf[35];
    int i = 34;
    buf[i--] = '\0';
    while (v != 0) {
        static const char digits[] = "0123456789abcdef";
        buf[i--] = digits[static_cast<unsigned>(v & 0xf)];
        v >>= 4;
    }
    buf[i--] = 'x';
    buf[i] = '0';
    return std::string(buf + i);
}

inline u128 parse_hex_u128(const std::string& s) {
    std::size_t pos = 0;
    if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) pos = 2;
    if (pos >= s.size()) throw std::invalid_argument("empty hex literal");
    u128 v = 0;
    for (; pos < s.size(); ++pos) {
        const char c = s[pos];
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
        else throw std::invalid_argument("bad hex digit in " + s);
        if (v >> 124) throw std::invalid_argument("hex literal overflows 128 bits");
        v = (v << 4) | static_cast<unsigned>(d);
    }
    return v;
}

}  // namespace stp
