#include <cmath>

#include "doctest.h"
#include "stp/geometry.hpp"

using namespace stp;

namespace {

// Reference scan for the first-hit recursion.
u128 brute_first_k_in_window(u128 a, u128 d, u128 m, u128 w, u128 cap) {
    for (u128 k = 0; k <= cap; ++k)
        if ((a + k * d) % m <= w) return k;
    return detail::kNoHit;
}

u128 brute_first_k_in_ball(u128 a, u128 d, u128 m, u128 r, u128 cap) {
    for (u128 k = 0; k <= cap; ++k) {
        const u128 z = (a + k * d) % m;
        if ((z < m - z ? z : m - z) <= r) return k;
    }
    return detail::kNoHit;
}

// Reference union membership: test every index in the range directly.
bool brute_union_member(const IntervalMap& f, const DerivedSequence& bp, const UnionSpec& u,
                        UnitPoint alpha, UnitPoint y) {
    const int q = f.q();
    for (u64 n = u.n_start; n <= u.n_end; ++n) {
        const u128 z = f.iterate_raw(y.k, u.t * n);
        const u128 w = (static_cast<u128>(u.t) * n * alpha.k) & grid_mask(q);
        if (circle_distance_raw(z, w, q) <= bp.radius(u.t * n, q).r) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("first hit recursion agrees with direct scan") {
    // exhaustive over small moduli
    for (u128 m : {u128{1}, u128{2}, u128{3}, u128{5}, u128{12}, u128{16}, u128{17}}) {
        for (u128 a = 0; a < m; ++a)
            for (u128 d = 0; d < m; ++d)
                for (u128 w : {u128{0}, u128{1}, m / 3, m - 1})
                    for (u128 cap : {u128{0}, u128{3}, 2 * m}) {
                        CAPTURE(static_cast<u64>(m));
                        CAPTURE(static_cast<u64>(a));
                        CAPTURE(static_cast<u64>(d));
                        CHECK(detail::first_k_in_window(a, d, m, w, cap) ==
                              brute_first_k_in_window(a, d, m, w, cap));
                    }
    }
    // random larger instances
    SequentialRng rng(RngKey{31, 0});
    for (int rep = 0; rep < 3000; ++rep) {
        const u128 m = 2 + rng.next_below(1u << 16);
        const u128 a = rng.next_below(1u << 17) % m;
        const u128 d = rng.next_below(1u << 17) % m;
        const u128 w = rng.next_below(1u << 17) % m;
        const u128 cap = rng.next_below(1u << 14);
        CHECK(detail::first_k_in_window(a, d, m, w, cap) ==
              brute_first_k_in_window(a, d, m, w, cap));
        const u128 r = rng.next_below(1u << 17) % (m / 2 + 1);
        CHECK(detail::first_k_in_ball(a, d, m, r, cap) ==
              brute_first_k_in_ball(a, d, m, r, cap));
    }
    CHECK_THROWS_AS(detail::first_k_in_window(0, 1, 0, 0, 10), std::domain_error);
}

TEST_CASE("strip membership for a rotation") {
    const IntervalMap f(Rotation{UnitPoint(16, 8)});
    const StripSpec s{f, 1, Radius(10, 8), 1};
    // condition: |y + alpha_rot - alpha| <= r
    CHECK(strip_member(s, UnitPoint(30, 8), UnitPoint(20, 8)));    // |36-30| = 6
    CHECK_FALSE(strip_member(s, UnitPoint(60, 8), UnitPoint(20, 8)));  // |36-60| = 24
    const StripSpec s2{f, 3, Radius(10, 8), 2};  // effective index 6
    CHECK(s2.effective_index() == 6);
    // f^6 y = y + 96; checks distance(y + 96, 6*alpha)
    CHECK(strip_member(s2, UnitPoint(20, 8), UnitPoint(20, 8)));   // |116 - 120| = 4
    CHECK_FALSE(strip_member(s2, UnitPoint(40, 8), UnitPoint(20, 8)));  // |116 - 240| = 124

    const StripSpec bad{f, 0, Radius(10, 8), 1};
    CHECK_THROWS_AS(strip_member(bad, UnitPoint(0, 8), UnitPoint(0, 8)), std::invalid_argument);
    const StripSpec mis{f, 1, Radius(10, 9), 1};
    CHECK_THROWS_AS(strip_member(mis, UnitPoint(0, 8), UnitPoint(0, 8)), std::invalid_argument);
}

TEST_CASE("exhaustive strip measure is exactly (2r+1)/2^q") {
    // the map is a grid bijection, so each alpha row contributes one full window
    const int q = 8;
    const std::vector<IntervalMap> maps = {
        IntervalMap(Rotation{UnitPoint(77, q)}),
        IntervalMap(TimesOdd(3, q)),
        IntervalMap(Iet({100, 56, 100}, Permutation({3, 1, 2}), q)),
    };
    for (const IntervalMap& f : maps) {
        for (u64 r : {u64{0}, u64{1}, u64{7}, u64{63}, u64{127}}) {
            for (u64 n : {u64{1}, u64{2}, u64{9}}) {
                const StripSpec s{f, n, Radius(r, q), 1};
                const StripMeasureResult res = measure_strip_exhaustive(s);
                CHECK(res.estimate.value == std::ldexp(static_cast<double>(2 * r + 1), -q));
                CHECK(res.estimate.method == MeasureMethod::exhaustive_grid);
                CHECK(res.estimate.samples == (u64{1} << (2 * q)));
            }
        }
        // half-circle radius covers everything
        const StripSpec full{f, 1, Radius(128, q), 1};
        CHECK(measure_strip_exhaustive(full).estimate.value == 1.0);
    }
    const IntervalMap big(Rotation{UnitPoint(1, 16)});
    CHECK_THROWS_AS(measure_strip_exhaustive(StripSpec{big, 1, Radius(1, 16), 1}),
                    std::invalid_argument);
}

TEST_CASE("monte carlo strip measure brackets the closed form") {
    const int q = 32;
    const IntervalMap f(Rotation{rotation_alpha_from_real(0.61803398874989, q)});
    const StripSpec s{f, 7, Radius(u128{1} << (q - 4), q), 1};  // width 1/16
    const StripMeasureResult res = measure_strip_mc(s, 40000, RngKey{2026, 50});
    CHECK(res.closed_form == 0.125);
    CHECK(std::abs(res.estimate.value - res.closed_form) <= 4.0 * res.estimate.std_error + 1e-9);
    CHECK(res.estimate.samples == 40000);
    CHECK_THROWS_AS(measure_strip_mc(s, 9999, RngKey{1, 0}), std::invalid_argument);
}

TEST_CASE("pair measure matches 4 b_j b_k for rotations") {
    const int q = 32;
    const IntervalMap f(Rotation{rotation_alpha_from_real(0.41421356237309, q)});
    const StripSpec sj{f, 1, Radius(u128{1} << (q - 4), q), 1};  // b_j = 1/16
    const StripSpec sk{f, 2, Radius(u128{1} << (q - 5), q), 1};  // b_k = 1/32
    const PairMeasureResult res = measure_pair_mc(sj, sk, 200000, RngKey{2026, 51});
    CHECK(res.closed_form == doctest::Approx(1.0 / 128.0));
    CHECK(std::abs(res.estimate.value - res.closed_form) <= 4.0 * res.estimate.std_error + 1e-9);
    CHECK_THROWS_AS(measure_pair_mc(sk, sj, 200000, RngKey{1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(measure_pair_mc(sj, sj, 200000, RngKey{1, 0}), std::invalid_argument);
}

TEST_CASE("parallelogram decomposition bookkeeping") {
    const ParallelogramDecomposition d = parallelogram_decomposition(2, 7, 0.0625, 0.03125);
    CHECK(d.pieces == 5);
    CHECK(d.total_area == 4.0 * 0.0625 * 0.03125);
    CHECK(d.piece_area == doctest::Approx(d.total_area / 5.0));
    CHECK_FALSE(d.merged);
    // the independent arc-overlap integral reproduces the product exactly
    CHECK(d.integral_area == doctest::Approx(d.total_area).epsilon(1e-12));

    const ParallelogramDecomposition m = parallelogram_decomposition(1, 2, 0.3, 0.3);
    CHECK(m.merged);
    CHECK(m.integral_area == doctest::Approx(0.36).epsilon(1e-12));

    const ParallelogramDecomposition e = parallelogram_decomposition(1, 4, 0.5, 0.5);
    CHECK(e.integral_area == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(parallelogram_decomposition(3, 3, 0.1, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(parallelogram_decomposition(1, 2, 0.6, 0.1), std::invalid_argument);
}

TEST_CASE("union window selection lands on the frozen indices") {
    const DerivedSequence bp(TargetSequence::harmonic({1, 1}), 10000);
    // harmonic b' is the 1/(16n) envelope here, so the crossing is sum 1/n > 3t
    const UnionWindow w11 = union_bound_select_N(1, 1, bp);
    CHECK(w11.N == 11);
    CHECK(w11.window_ok);
    CHECK(w11.two_sigma == doctest::Approx(0.377484668).epsilon(1e-8));
    CHECK(w11.certified_bound == doctest::Approx(0.234989993).epsilon(1e-6));
    CHECK(w11.certified_bound > 0.125);

    const UnionWindow w110 = union_bound_select_N(1, 10, bp);
    CHECK(w110.N == 191);
    CHECK(w110.window_ok);
    CHECK(w110.two_sigma == doctest::Approx(0.375392044).epsilon(1e-8));

    const UnionWindow w21 = union_bound_select_N(2, 1, bp);
    CHECK(w21.N == 227);
    CHECK(w21.two_sigma == doctest::Approx(0.375272919).epsilon(1e-8));

    const UnionWindow w210 = union_bound_select_N(2, 10, bp);
    CHECK(w210.N == 3834);
    CHECK(w210.two_sigma == doctest::Approx(0.375002609).epsilon(1e-8));
    CHECK(w210.certified_bound == doctest::Approx(0.234375652).epsilon(1e-6));

    // horizon too short to reach the window
    const DerivedSequence tiny(TargetSequence::harmonic({1, 1}), 10);
    CHECK_THROWS_AS(union_bound_select_N(1, 1, tiny), std::runtime_error);
    CHECK_THROWS_AS(union_bound_select_N(0, 1, bp), std::invalid_argument);
}

TEST_CASE("union membership fast path agrees with the direct scan") {
    const int q = 12;
    const DerivedSequence bp(TargetSequence::harmonic({1, 1}), 120);
    SequentialRng rng(RngKey{77, 0});
    const std::vector<IntervalMap> maps = {
        IntervalMap(Rotation{UnitPoint(rng.next_below(4096) | 1, q)}),
        IntervalMap(TimesOdd(5, q)),
        IntervalMap(random_iet(3, Permutation({3, 1, 2}), rng, q)),
    };
    for (const IntervalMap& f : maps) {
        for (const UnionSpec u : {UnionSpec{1, 1, 50}, UnionSpec{1, 7, 29}, UnionSpec{2, 1, 60}}) {
            u64 members = 0;
            for (int rep = 0; rep < 400; ++rep) {
                const UnitPoint a = rng.next_point(q);
                const UnitPoint y = rng.next_point(q);
                const bool got = union_member(f, bp, u, a, y);
                CHECK(got == brute_union_member(f, bp, u, a, y));
                members += got;
            }
            CHECK(members > 0);  // the comparison exercised both outcomes
        }
    }
    // q > 64 rotations take the generic path
    const IntervalMap wide(Rotation{UnitPoint((u128{1} << 70) + 1, 80)});
    const UnionSpec u{1, 1, 40};
    const DerivedSequence bw(TargetSequence::harmonic({1, 1}), 40);
    SequentialRng rng2(RngKey{78, 0});
    for (int rep = 0; rep < 50; ++rep) {
        const UnitPoint a = rng2.next_point(80);
        const UnitPoint y = rng2.next_point(80);
        CHECK(union_member(wide, bw, u, a, y) == brute_union_member(wide, bw, u, a, y));
    }
    CHECK_THROWS_AS(union_member(maps[0], bp, UnionSpec{1, 5, 4}, UnitPoint(0, q), UnitPoint(0, q)),
                    std::invalid_argument);
    CHECK_THROWS_AS(union_member(maps[0], bp, UnionSpec{1, 1, 121}, UnitPoint(0, q), UnitPoint(0, q)),
                    std::out_of_range);
}

TEST_CASE("union monte carlo estimate exceeds one eighth on the window") {
    const int q = 32;
    const DerivedSequence bp(TargetSequence::harmonic({1, 1}), 16);
    const IntervalMap f(Rotation{rotation_alpha_from_real(0.73205080756887, q)});
    const UnionSpec u{1, 1, 11};
    const MeasureEstimate est = measure_union_mc(f, bp, u, 50000, RngKey{2026, 52});
    CHECK(est.value - 4.0 * est.std_error > 0.125);
    CHECK(est.value < 0.377484668109668);  // union bounded by the sum
}

TEST_CASE("quantized set counting with wraparound") {
    QuantizedSet s(128);
    for (u64 i : {u64{0}, u64{5}, u64{63}, u64{64}, u64{100}}) s.set(i);
    CHECK(s.count() == 5);
    CHECK(s.test(63));
    CHECK_FALSE(s.test(62));
    CHECK(s.count_interval(0, 128) == 5);
    CHECK(s.count_interval(0, 6) == 2);
    CHECK(s.count_interval(63, 2) == 2);     // crosses the word boundary
    CHECK(s.count_interval(100, 50) == 3);   // wraps: {100, 0, 5}
    CHECK(s.count_interval(101, 27) == 0);
    CHECK(s.count_interval(5, 200) == 5);    // saturates at the full count
    CHECK_THROWS_AS(QuantizedSet(0), std::invalid_argument);
}

TEST_CASE("invariant sets replicate one block") {
    SequentialRng rng(RngKey{9, 0});
    const QuantizedSet s = random_invariant_set(4096, 16, {3, 10}, rng);
    CHECK(s.invariant_under_shift(4096 / 16));
    CHECK_FALSE(s.invariant_under_shift(7));
    const u64 need = (3 * 256) / 10 + 1;
    CHECK(s.count() == 16 * need);
    CHECK(s.count() * 10 > 3 * 4096);  // density strictly above sigma
    CHECK_THROWS_AS(random_invariant_set(4096, 15, {1, 2}, rng), std::invalid_argument);
    CHECK_THROWS_AS(random_invariant_set(4096, 16, {1, 1}, rng), std::invalid_argument);
}

TEST_CASE("interval lemma verdict and preconditions") {
    SequentialRng rng(RngKey{10, 0});
    const u64 m = 65536, k = 128;
    const QuantizedSet B = random_invariant_set(m, k, {1, 2}, rng);
    const u64 len = 51500;  // inside (100 m / k, 101 m / k) = (51200, 51712)
    for (u64 start : {u64{0}, u64{1}, u64{12345}, u64{65000}}) {
        const IntervalLemmaResult res = interval_lemma_check(B, k, start, len, {1, 2});
        CHECK(res.passed);
        CHECK(res.measured_ratio > res.bound);
    }
    // preconditions: divisor, invariance, density, window length
    CHECK_THROWS_AS(interval_lemma_check(B, 127, 0, len, {1, 2}), std::invalid_argument);
    QuantizedSet lop(m);
    lop.set(3);
    CHECK_THROWS_AS(interval_lemma_check(lop, k, 0, len, {1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(interval_lemma_check(B, k, 0, len, {99, 100}), std::invalid_argument);
    CHECK_THROWS_AS(interval_lemma_check(B, k, 0, 51200, {1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(interval_lemma_check(B, k, 0, 51712, {1, 2}), std::invalid_argument);
}

TEST_CASE("interval lemma on adversarial block placements") {
    // one contiguous run per block is the worst case for interval alignment
    const u64 m = 65536, k = 128, block = m / k;
    QuantizedSet B(m);
    const u64 fill = block / 2 + 1;  // density just over 1/2
    for (u64 rep = 0; rep < k; ++rep)
        for (u64 i = 0; i < fill; ++i) B.set(rep * block + i);
    REQUIRE(B.invariant_under_shift(block));
    const u64 len = 51703;
    for (u64 start = 0; start < m; start += 97) {
        const IntervalLemmaResult res = interval_lemma_check(B, k, start, len, {1, 2});
        CHECK(res.passed);
    }
}
