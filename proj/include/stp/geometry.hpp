#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "stp/fixedpoint.hpp"
#include "stp/maps.hpp"
#include "stp/rng.hpp"
#include "stp/sequences.hpp"

// Strip sets V'_n in the (alpha, y) square, their measures, the union lower
// bound with window selection, and the shifted-interval density lemma on the
// grid. Membership tests are exact integer arithmetic; measures are Monte
// Carlo (binomial counts) or exhaustive at small Q.

namespace stp {

namespace detail {

inline constexpr u128 kNoHit = ~u128{0};

// Minimal k >= 0 with (a + k*d) mod m <= w, or kNoHit if none with k <= cap.
// Euclid-style descent, O(log m) per call. Requires m <= 2^64 so the lap
// reconstruction (j+1)*m stays inside u128.
inline u128 first_k_in_window(u128 a, u128 d, u128 m, u128 w, u128 cap) {
    if (m == 0 || m > (u128{1} << 64)) throw std::domain_error("modulus out of range");
    a %= m;
    if (w >= m - 1) return 0;  // window covers the circle
    if (a <= w) return 0;
    d %= m;
    if (d == 0) return kNoHit;
    if (2 * d > m) {
        // z in [0,w] iff (w - z) mod m in [0,w]; negating the step keeps the window.
        return first_k_in_window((w + m - a) % m, m - d, m, w, cap);
    }
    // Climbing by d <= m/2 from a > w: the window is only entered via a wrap,
    // and each wrap lands in [0, d). Entry points shift by -(m mod d) mod d
    // per lap, a rotation on the modulus-d circle. Lap reconstruction needs
    // (cap+1)*m to fit u128, guaranteed by m <= 2^64 and realistic caps.
    const u128 k1 = (m - a + d - 1) / d;
    if (k1 > cap) return kNoHit;
    const u128 a1 = a + k1 * d - m;
    if (a1 <= w) return k1;  // w >= d always exits here since a1 < d
    const u128 r = m % d;
    const u128 j = first_k_in_window(a1, (d - r) % d, d, w, cap);  // laps after the first wrap
    if (j == kNoHit) return kNoHit;
    const u128 entry = (a1 + j * ((d - r) % d)) % d;
    const u128 k = ((j + 1) * m + entry - a) / d;
    return k <= cap ? k : kNoHit;
}

// Minimal k >= 0 with circle_distance(a + k*d, 0) <= r on Z_m.
inline u128 first_k_in_ball(u128 a, u128 d, u128 m, u128 r, u128 cap) {
    if (2 * r >= m) return 0;
    return first_k_in_window((a + r) % m, d, m, 2 * r, cap);
}

}  // namespace detail

struct StripSpec {
    IntervalMap f;
    u64 n{1};        // strip index
    Radius radius;   // half-width at the effective index
    u64 t{1};        // multiplier: the strip is V'_{t*n}

    u64 effective_index() const { return t * n; }

    void validate() const {
        if (n < 1 || t < 1) throw std::invalid_argument("strip index and multiplier start at 1");
        if (radius.q != f.q()) throw std::invalid_argument("radius grid differs from map grid");
    }
};

// (alpha, y) lies in S cap V'_{tn}: circle_distance(f^{tn} y, tn*alpha) <= radius.
inline bool strip_member(const StripSpec& spec, UnitPoint alpha, UnitPoint y) {
    spec.validate();
    const int q = spec.f.q();
    if (alpha.q != static_cast<u32>(q) || y.q != static_cast<u32>(q))
        throw std::invalid_argument("sample grid differs from map grid");
    const u64 ne = spec.effective_index();
    const u128 z = spec.f.iterate_raw(y.k, ne);
    const u128 w = (static_cast<u128>(ne) * alpha.k) & grid_mask(q);
    return circle_distance_raw(z, w, q) <= spec.radius.r;
}

enum class MeasureMethod { monte_carlo, exhaustive_grid, closed_form };

struct MeasureEstimate {
    double value{0};
    double std_error{0};
    u64 samples{0};
    MeasureMethod method{MeasureMethod::monte_carlo};
};

inline const char* method_name(MeasureMethod m) {
    switch (m) {
        case MeasureMethod::monte_carlo: return "monte_carlo";
        case MeasureMethod::exhaustive_grid: return "exhaustive_grid";
        default: return "closed_form";
    }
}

inline MeasureEstimate binomial_estimate(u64 hits, u64 samples) {
    const double p = static_cast<double>(hits) / static_cast<double>(samples);
    return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(samples)), samples,
            MeasureMethod::monte_carlo};
}

namespace detail {

// Integer hit counts over a keyed sample range; slot 0 draws alpha, slot 1
// draws y, further slots are free for the predicate.
template <typename Pred>
u64 mc_hit_count(const Pred& pred, RngKey key, int q, u64 first, u64 last) {
    u64 hits = 0;
    for (u64 i = first; i < last; ++i) {
        const UnitPoint alpha = sample_uniform(key, i, q, 0);
        const UnitPoint y = sample_uniform(key, i, q, 1);
        if (pred(alpha, y)) ++hits;
    }
    return hits;
}

// Permutation table of f^n on the Q <= 12 grid by repeated squaring.
inline std::vector<u32> grid_power_table(const IntervalMap& f, u64 n) {
    const int q = f.q();
    if (q > 12) throw std::invalid_argument("exhaustive mode requires Q <= 12");
    const u32 m = static_cast<u32>(u128{1} << q);
    std::vector<u32> base(m), acc(m);
    for (u32 x = 0; x < m; ++x) {
        base[x] = static_cast<u32>(f.apply_raw(x));
        acc[x] = x;
    }
    std::vector<u32> tmp(m);
    while (n > 0) {
        if (n & 1) {
            for (u32 x = 0; x < m; ++x) tmp[x] = base[acc[x]];
            acc.swap(tmp);
        }
        n >>= 1;
        if (n == 0) break;
        for (u32 x = 0; x < m; ++x) tmp[x] = base[base[x]];
        base.swap(tmp);
    }
    return acc;
}

}  // namespace detail

struct StripMeasureResult {
    MeasureEstimate estimate;
    double closed_form{0};  // 2 * radius as a fraction of the circle
};

inline StripMeasureResult measure_strip_mc(const StripSpec& spec, u64 samples, RngKey key) {
    spec.validate();
    if (samples < 10000) throw std::invalid_argument("Monte Carlo needs >= 10^4 samples");
    const int q = spec.f.q();
    const u64 hits = detail::mc_hit_count(
        [&](UnitPoint a, UnitPoint y) { return strip_member(spec, a, y); }, key, q, 0, samples);
    StripMeasureResult res;
    res.estimate = binomial_estimate(hits, samples);
    res.closed_form = 2.0 * spec.radius.value();
    return res;
}

// Full 2^(2Q) grid count at Q <= 12. The count is exact; the closed form
// 2b' can differ by up to one grid cell of area.
inline StripMeasureResult measure_strip_exhaustive(const StripSpec& spec) {
    spec.validate();
    const int q = spec.f.q();
    const u32 m = static_cast<u32>(u128{1} << q);
    const std::vector<u32> fn = detail::grid_power_table(spec.f, spec.effective_index());
    const u64 r = static_cast<u64>(spec.radius.r);
    const u64 ne = spec.effective_index();
    u64 hits = 0;
    for (u32 ak = 0; ak < m; ++ak) {
        const u32 w = static_cast<u32>((static_cast<u64>(ne) * ak) & (m - 1));
        for (u32 y = 0; y < m; ++y)
            if (circle_distance_raw(fn[y], w, q) <= r) ++hits;
    }
    StripMeasureResult res;
    res.estimate = {static_cast<double>(hits) / std::ldexp(1.0, 2 * q), 0.0,
                    u64{1} << (2 * q), MeasureMethod::exhaustive_grid};
    res.closed_form = 2.0 * spec.radius.value();
    return res;
}

struct PairMeasureResult {
    MeasureEstimate estimate;
    double closed_form{0};  // 4 * b_j * b_k
};

inline PairMeasureResult measure_pair_mc(const StripSpec& spec_j, const StripSpec& spec_k,
                                         u64 samples, RngKey key) {
    spec_j.validate();
    spec_k.validate();
    if (spec_j.effective_index() >= spec_k.effective_index())
        throw std::invalid_argument("pair measure requires j < k");
    if (spec_j.f.q() != spec_k.f.q()) throw std::invalid_argument("pair grids differ");
    if (samples < 10000) throw std::invalid_argument("Monte Carlo needs >= 10^4 samples");
    const int q = spec_j.f.q();
    const u64 hits = detail::mc_hit_count(
        [&](UnitPoint a, UnitPoint y) { return strip_member(spec_j, a, y) && strip_member(spec_k, a, y); },
        key, q, 0, samples);
    PairMeasureResult res;
    res.estimate = binomial_estimate(hits, samples);
    res.closed_form = 4.0 * spec_j.radius.value() * spec_k.radius.value();
    return res;
}

struct ParallelogramDecomposition {
    u64 pieces{0};          // k - j
    double piece_area{0};   // 4 b_j b_k / (k - j)
    double total_area{0};   // 4 b_j b_k
    double integral_area{0};  // independent arc-overlap integral over alpha
    bool merged{false};     // pieces touch when 2(b_j + b_k) >= 1
};

namespace detail {

// Exact integral over one circle turn of the overlap length of two arcs of
// lengths l1, l2 at circular offset o. Piecewise linear in o; integrating on
// the breakpoint partition is exact. Equals l1*l2 for arcs on the circle.
inline double arc_overlap_integral(double l1, double l2) {
    const double lo = std::min(l1, l2), hi = std::max(l1, l2);
    auto overlap = [&](double o) {
        o = std::abs(o);
        double v = std::max(0.0, std::min(lo, (l1 + l2) / 2 - o));
        v += std::max(0.0, std::min(lo, (l1 + l2) / 2 - (1.0 - o)));
        return std::min(v, lo);
    };
    std::vector<double> bp = {0.0, std::abs(hi - lo) / 2, (l1 + l2) / 2,
                              1.0 - (l1 + l2) / 2, 1.0 - std::abs(hi - lo) / 2, 0.5};
    std::vector<double> pts;
    for (double b : bp)
        if (b >= 0.0 && b <= 0.5) pts.push_back(b);
    std::sort(pts.begin(), pts.end());
    double area = 0;
    for (size_t i = 0; i + 1 < pts.size(); ++i)
        area += (overlap(pts[i]) + overlap(pts[i + 1])) / 2 * (pts[i + 1] - pts[i]);
    return 2.0 * area;  // o and -o contribute symmetrically
}

}  // namespace detail

inline ParallelogramDecomposition parallelogram_decomposition(u64 j, u64 k, double b_j, double b_k) {
    if (j >= k) throw std::invalid_argument("decomposition requires j < k");
    if (b_j < 0 || b_k < 0 || b_j > 0.5 || b_k > 0.5)
        throw std::invalid_argument("half-widths must lie in [0, 1/2]");
    ParallelogramDecomposition d;
    d.pieces = k - j;
    d.total_area = 4.0 * b_j * b_k;
    d.piece_area = d.total_area / static_cast<double>(k - j);
    d.merged = 2.0 * (b_j + b_k) >= 1.0;
    d.integral_area = detail::arc_overlap_integral(std::min(2.0 * b_j, 1.0), std::min(2.0 * b_k, 1.0));
    return d;
}

struct UnionWindow {
    u64 N{0};
    double two_sigma{0};       // 2 sum of b'_{tn}, n in [N0, N]
    double certified_bound{0}; // 2S - (2S)^2 evaluated on the safe side
    bool window_ok{false};     // 3/8 < 2S < 1/2 certified
};

// Smallest N with 2 sum_{n=N0}^{N} b'_{tn} > 3/8. The sum S is tracked as a
// floor/ceil 2^-128 fixed-point pair, so both window inequalities are decided
// with certainty unless the true sum sits within ~N*2^-128 of a boundary,
// which raises an error rather than guessing.
inline UnionWindow union_bound_select_N(u64 t, u64 n0, const DerivedSequence& bp) {
    if (t < 1 || n0 < 1) throw std::invalid_argument("multiplier and start index begin at 1");
    FixedAccum lo, hi;
    auto add_term = [&](u64 idx) {
        if (bp.base().rational()) {
            const auto [cn, cd] = bp.c_fraction(idx);
            const bool env_wins = !(cn < cd && u128{16} * idx * cn < cd);
            const u128 num = env_wins ? 1 : cn;
            const u128 den = env_wins ? u128{16} * idx : cd;
            lo.add_fraction(num, den);
            hi.add_fraction(num, den);
            if (!quantize_fraction(num % den, den, 128).exact) hi.add_ulp();
        } else {
            // Irrational terms carry a few ulps of evaluation error; the
            // window decision for these is best-effort with 8-ulp slack.
            const double v = bp.value(idx);
            lo.add_double(v * (1.0 - 8e-16));
            hi.add_double(v * (1.0 + 8e-16));
        }
    };
    // Thresholds for S: 3/16 and 1/4, as 2^-128 fractional bits.
    const u128 thr_38 = u128{3} << 124;
    const u128 thr_12 = u128{1} << 126;
    auto certify = [](bool a, bool b) {
        if (a != b) throw std::runtime_error("window decision ambiguous at 2^-128 precision");
        return a;
    };
    for (u64 n = n0; n <= bp.horizon() / t; ++n) {
        add_term(t * n);
        const bool above_38 = certify(lo.whole() > 0 || lo.frac_bits() > thr_38,
                                      hi.whole() > 0 || hi.frac_bits() > thr_38);
        if (!above_38) continue;
        const bool below_12 = certify(lo.whole() == 0 && lo.frac_bits() < thr_12,
                                      hi.whole() == 0 && hi.frac_bits() < thr_12);
        UnionWindow w;
        w.N = n;
        w.two_sigma = 2.0 * lo.value();
        w.window_ok = below_12;
        const double s_lo = 2.0 * lo.value();
        const double s_hi = 2.0 * hi.value() + 1e-12;
        w.certified_bound = s_lo - s_hi * s_hi;
        return w;
    }
    FixedAccum reached = lo;
    throw std::runtime_error("insufficient horizon: union window not reached, 2*sum = " +
                             std::to_string(2.0 * reached.value()));
}

struct UnionSpec {
    u64 t{1};
    u64 n_start{1};
    u64 n_end{1};

    void validate(const DerivedSequence& bp) const {
        if (t < 1 || n_start < 1 || n_start > n_end)
            throw std::invalid_argument("bad union index range");
        if (t * n_end > bp.horizon()) throw std::out_of_range("union range beyond derived horizon");
    }
};

// Membership of (alpha, y) in the union of V'_{tn} over n in [n_start, n_end].
// Rotations use the first-hit recursion with a shrinking radius level; other
// maps scan the orbit directly.
inline bool union_member(const IntervalMap& f, const DerivedSequence& bp, const UnionSpec& u,
                         UnitPoint alpha, UnitPoint y) {
    u.validate(bp);
    const int q = f.q();
    const u128 m = q < 128 ? (u128{1} << q) : 0;
    if (f.kind() == IntervalMap::Kind::rotation && q <= 64) {
        const u128 beta = f.as_rotation().alpha.k;
        const u128 d = (static_cast<u128>(u.t) * ((beta + m - alpha.k) & grid_mask(q))) & grid_mask(q);
        u64 n = u.n_start;
        u128 a = (y.k + static_cast<u128>(u.t) * n * ((beta + m - alpha.k) & grid_mask(q))) & grid_mask(q);
        while (n <= u.n_end) {
            // Search at the current radius level; since radii are
            // non-increasing, a failed candidate strictly lowers the level.
            const u128 level = bp.radius(u.t * n, q).r;
            const u128 j = detail::first_k_in_ball(a, d, m, level, u.n_end - n);
            if (j == detail::kNoHit) return false;
            n += static_cast<u64>(j);
            a = (a + j * d) & grid_mask(q);
            if (circle_distance_raw(a, 0, q) <= bp.radius(u.t * n, q).r) return true;
            n += 1;
            a = (a + d) & grid_mask(q);
        }
        return false;
    }
    // Generic scan: advance f^t once per n.
    u128 z = f.iterate_raw(y.k, u.t * u.n_start);
    for (u64 n = u.n_start; n <= u.n_end; ++n) {
        const u128 w = (static_cast<u128>(u.t) * n * alpha.k) & grid_mask(q);
        if (circle_distance_raw(z, w, q) <= bp.radius(u.t * n, q).r) return true;
        if (n < u.n_end) z = f.iterate_raw(z, u.t);
    }
    return false;
}

inline MeasureEstimate measure_union_mc(const IntervalMap& f, const DerivedSequence& bp,
                                        const UnionSpec& u, u64 samples, RngKey key) {
    u.validate(bp);
    if (samples < 10000) throw std::invalid_argument("Monte Carlo needs >= 10^4 samples");
    const int q = f.q();
    const u64 hits = detail::mc_hit_count(
        [&](UnitPoint a, UnitPoint y) { return union_member(f, bp, u, a, y); }, key, q, 0, samples);
    return binomial_estimate(hits, samples);
}

// Subset of a cyclic grid of m cells stored as a bitset; the interval lemma
// operates on sets invariant under shift by m/k.
class QuantizedSet {
  public:
    explicit QuantizedSet(u64 cells) : m_(cells), words_((cells + 63) / 64, 0) {
        if (cells == 0) throw std::invalid_argument("empty grid");
    }

    u64 cells() const { return m_; }

    void set(u64 i) { words_[i >> 6] |= u64{1} << (i & 63); }
    bool test(u64 i) const { return (words_[i >> 6] >> (i & 63)) & 1; }

    u64 count() const {
        u64 c = 0;
        for (u64 w : words_) c += static_cast<u64>(__builtin_popcountll(w));
        return c;
    }

    // Population of [first, first+len) with wraparound.
    u64 count_interval(u64 first, u64 len) const {
        if (len >= m_) return count();
        u64 c = 0;
        const u64 end = first + len;
        if (end <= m_) {
            c = count_range(first, end);
        } else {
            c = count_range(first, m_) + count_range(0, end - m_);
        }
        return c;
    }

    bool invariant_under_shift(u64 s) const {
        for (u64 i = 0; i < m_; ++i)
            if (test(i) != test((i + s) % m_)) return false;
        return true;
    }

  private:
    u64 count_range(u64 lo, u64 hi) const {  // [lo, hi), no wrap
        u64 c = 0;
        u64 wlo = lo >> 6, whi = (hi + 63) >> 6;
        for (u64 w = wlo; w < whi; ++w) {
            u64 bits = words_[w];
            const u64 base = w << 6;
            if (base < lo) bits &= ~u64{0} << (lo - base);
            if (base + 64 > hi) bits &= hi - base == 64 ? ~u64{0} : (u64{1} << (hi - base)) - 1;
            c += static_cast<u64>(__builtin_popcountll(bits));
        }
        return c;
    }

    u64 m_;
    std::vector<u64> words_;
};

// Random 1/k-invariant set with strictly more than sigma*m cells: fills one
// fundamental block of m/k cells and replicates it.
inline QuantizedSet random_invariant_set(u64 m, u64 k, Rational64 sigma, SequentialRng& rng) {
    if (k == 0 || m % k != 0) throw std::invalid_argument("k must divide the grid size");
    const u64 block = m / k;
    const u64 need = static_cast<u64>((static_cast<u128>(sigma.num) * block) / sigma.den) + 1;
    if (need > block) throw std::invalid_argument("density too close to 1 for this block size");
    std::vector<u64> idx(block);
    std::iota(idx.begin(), idx.end(), u64{0});
    for (u64 i = block - 1; i > 0; --i) std::swap(idx[i], idx[rng.next_below(i + 1)]);
    QuantizedSet set(m);
    for (u64 i = 0; i < need; ++i)
        for (u64 rep = 0; rep < k; ++rep) set.set(idx[i] + rep * block);
    return set;
}

struct IntervalLemmaResult {
    bool passed{false};
    double measured_ratio{0};  // lambda(J cap B)
    double bound{0};           // (99/101) * sigma * l(J)
};

// Lemma hypotheses: B invariant under shift by m/k, lambda(B) > sigma,
// 100/k < l(J) < 101/k. Conclusion checked exactly by counting:
// 101 * |J cap B| * s_den * k > 99 * s_num * len * k ... reduced to integers.
inline IntervalLemmaResult interval_lemma_check(const QuantizedSet& B, u64 k, u64 j_first,
                                                u64 j_len, Rational64 sigma) {
    const u64 m = B.cells();
    if (k == 0 || m % k != 0)
        throw std::invalid_argument("precondition failed: k must divide the grid size");
    if (!B.invariant_under_shift(m / k))
        throw std::invalid_argument("precondition failed: B is not 1/k-shift invariant");
    const u64 card = B.count();
    // lambda(B) > sigma: card/m > s_num/s_den
    if (!(static_cast<u128>(card) * sigma.den > static_cast<u128>(sigma.num) * m))
        throw std::invalid_argument("precondition failed: lambda(B) <= sigma");
    // 100/k < len/m < 101/k
    if (!(static_cast<u128>(j_len) * k > u128{100} * m && static_cast<u128>(j_len) * k < u128{101} * m))
        throw std::invalid_argument("precondition failed: l(J) outside (100/k, 101/k)");
    const u64 hit = B.count_interval(j_first % m, j_len);
    // hit/m > (99/101) * sigma * len/m  <=>  101 * hit * s_den > 99 * s_num * len
    const bool pass = static_cast<u128>(101) * hit * sigma.den >
                      static_cast<u128>(99) * sigma.num * j_len;
    IntervalLemmaResult res;
    res.passed = pass;
    res.measured_ratio = static_cast<double>(hit) / static_cast<double>(m);
    res.bound = 99.0 / 101.0 * (static_cast<double>(sigma.num) / static_cast<double>(sigma.den)) *
                (static_cast<double>(j_len) / static_cast<double>(m));
    return res;
}

}  // namespace stp
