#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "stp/fixedpoint.hpp"
#include "stp/geometry.hpp"
#include "stp/maps.hpp"
#include "stp/rng.hpp"
#include "stp/sequences.hpp"

// Statistical experiments: hit sequences along moving targets, tail-window
// limsup proxies, fixed-center and discontinuity variants, hitting times with
// the log-law fit, the alpha survey, and product equidistribution. All orbit
// arithmetic is exact on the grid; randomness enters only through keyed
// sample draws, so results are independent of scheduling.

namespace stp {

namespace detail {

// Calls fn with a concrete step closure, keeping variant dispatch out of the
// per-iterate loop.
template <typename Fn>
decltype(auto) with_stepper(const IntervalMap& f, Fn&& fn) {
    const int q = f.q();
    const u128 mask = grid_mask(q);
    switch (f.kind()) {
        case IntervalMap::Kind::rotation: {
            const u128 a = f.as_rotation().alpha.k;
            return fn([a, mask](u128 z) { return (z + a) & mask; });
        }
        case IntervalMap::Kind::times_odd: {
            const u128 m = f.as_times_odd().multiplier;
            return fn([m, mask](u128 z) { return (z * m) & mask; });
        }
        default: {
            const Iet& t = f.as_iet();
            return fn([&t](u128 z) { return t.apply_raw(z); });
        }
    }
}

}  // namespace detail

struct HitRecord {
    u64 horizon{0};
    std::vector<u64> indices;  // ascending hit indices in [1, horizon]

    u64 cumulative(u64 n) const {
        return static_cast<u64>(std::upper_bound(indices.begin(), indices.end(), n) -
                                indices.begin());
    }
};

// Independence reference E(n) = sum of 2 b_i, a labeled heuristic only.
inline double expected_count(const TargetSequence& b, u64 n) {
    return 2.0 * prefix_sum(b, 1, n);
}

// Grid radii of b over [1, N], reused across orbits.
inline std::vector<u128> radius_table(const TargetSequence& b, u64 N, int q) {
    std::vector<u128> r(N + 1, 0);
    for (u64 i = 1; i <= N; ++i) r[i] = b.radius(i, q).r;
    return r;
}

// Centers R_alpha^i x for i in [1, N].
inline std::vector<u128> rotation_centers(UnitPoint alpha, UnitPoint x, u64 N) {
    check_same_grid(alpha, x);
    const u128 mask = grid_mask(alpha.q);
    std::vector<u128> c(N + 1, 0);
    u128 z = x.k;
    for (u64 i = 1; i <= N; ++i) {
        z = (z + alpha.k) & mask;
        c[i] = z;
    }
    return c;
}

// Hit at i iff circle_distance(f^i y, centers[i]) <= radii[i].
inline HitRecord hit_record_from_orbit(const IntervalMap& f, u128 y0,
                                       const std::vector<u128>& centers,
                                       const std::vector<u128>& radii, u64 N) {
    const int q = f.q();
    HitRecord rec;
    rec.horizon = N;
    detail::with_stepper(f, [&](auto step) {
        u128 z = y0;
        for (u64 i = 1; i <= N; ++i) {
            z = step(z);
            if (circle_distance_raw(z, centers[i], q) <= radii[i]) rec.indices.push_back(i);
        }
    });
    return rec;
}

inline HitRecord hit_sequence(const IntervalMap& f, UnitPoint alpha, UnitPoint x, UnitPoint y,
                              const TargetSequence& b, u64 N) {
    if (N < 1) throw std::invalid_argument("horizon must be >= 1");
    const int q = f.q();
    if (alpha.q != static_cast<u32>(q) || x.q != static_cast<u32>(q) || y.q != static_cast<u32>(q))
        throw std::invalid_argument("points and map live on different grids");
    return hit_record_from_orbit(f, y.k, rotation_centers(alpha, x, N), radius_table(b, N, q), N);
}

// Finite form of the shift property: every hit at i >= 2 for (x, y) is a hit
// at i-1 for (R_alpha x, f y). Exact, given non-increasing radii.
inline bool shift_property_holds(const IntervalMap& f, UnitPoint alpha, UnitPoint x, UnitPoint y,
                                 const TargetSequence& b, u64 N) {
    const HitRecord a = hit_sequence(f, alpha, x, y, b, N);
    const UnitPoint x1 = rotation_apply(x, alpha);
    const UnitPoint y1(f.apply_raw(y.k), f.q());
    const HitRecord bb = hit_sequence(f, alpha, x1, y1, b, N);
    for (u64 i : a.indices) {
        if (i < 2) continue;
        if (!std::binary_search(bb.indices.begin(), bb.indices.end(), i - 1)) return false;
    }
    return true;
}

struct LimsupEstimate {
    u64 horizon{0};
    u64 samples{0};
    std::vector<u64> tail_starts;
    std::vector<double> fractions;  // share of orbits with >= 1 hit in [tail, N]
};

namespace detail {

// Index of the last hit of one orbit, 0 if none.
template <typename Step>
u64 last_hit_index(Step step, u128 z0, const u128* centers, const u128* radii, u64 N, int q) {
    u128 z = z0;
    u64 last = 0;
    for (u64 i = 1; i <= N; ++i) {
        z = step(z);
        if (circle_distance_raw(z, centers[i], q) <= radii[i]) last = i;
    }
    return last;
}

}  // namespace detail

// Tail-hit counts over the keyed sample range [s0, s1); counts[j] = number of
// sampled orbits whose last hit is >= tail_starts[j]. Workers partition the
// sample range; integer counts make aggregation order-free.
inline std::vector<u64> limsup_tail_counts(const IntervalMap& f, const std::vector<u128>& centers,
                                           const std::vector<u128>& radii, u64 N,
                                           const std::vector<u64>& tail_starts, RngKey key, u64 s0,
                                           u64 s1) {
    const int q = f.q();
    std::vector<u64> counts(tail_starts.size(), 0);
    detail::with_stepper(f, [&](auto step) {
        for (u64 s = s0; s < s1; ++s) {
            const u128 y0 = sample_uniform(key, s, q, 0).k;
            const u64 last = detail::last_hit_index(step, y0, centers.data(), radii.data(), N, q);
            for (size_t j = 0; j < tail_starts.size(); ++j)
                if (last >= tail_starts[j]) counts[j] += 1;
        }
    });
    return counts;
}

inline std::vector<u64> default_tail_grid(u64 N) {
    return {1, std::max<u64>(1, N / 4), std::max<u64>(1, N / 2), std::max<u64>(1, 3 * (N / 4))};
}

inline LimsupEstimate limsup_measure(const IntervalMap& f, UnitPoint alpha, UnitPoint x,
                                     const TargetSequence& b, u64 N, u64 y_samples,
                                     std::vector<u64> tail_grid, RngKey key) {
    if (y_samples < 1) throw std::invalid_argument("need at least one sample");
    if (tail_grid.empty()) tail_grid = default_tail_grid(N);
    for (u64 t : tail_grid)
        if (t < 1 || t > N) throw std::invalid_argument("tail start outside [1, N]");
    const int q = f.q();
    const auto centers = rotation_centers(alpha, x, N);
    const auto radii = radius_table(b, N, q);
    const auto counts = limsup_tail_counts(f, centers, radii, N, tail_grid, key, 0, y_samples);
    LimsupEstimate est;
    est.horizon = N;
    est.samples = y_samples;
    est.tail_starts = tail_grid;
    for (u64 c : counts)
        est.fractions.push_back(static_cast<double>(c) / static_cast<double>(y_samples));
    return est;
}

// Kurzweil: y against moving balls B(R_alpha^i x, b_i) with no dynamics on y,
// which is the f = Rotation(0) case of the limsup run.
inline LimsupEstimate kurzweil_run(UnitPoint alpha, UnitPoint x, const TargetSequence& b, u64 N,
                                   u64 y_samples, std::vector<u64> tail_grid, RngKey key) {
    const IntervalMap id{Rotation{UnitPoint(0, alpha.q)}};
    return limsup_measure(id, alpha, x, b, N, y_samples, std::move(tail_grid), key);
}

// Fixed center: sampled x against balls B(y_center, b_i) along
// the f-orbit of x.
inline LimsupEstimate fixed_center_run(const IntervalMap& f, UnitPoint y_center,
                                       const TargetSequence& b, u64 N, u64 x_samples,
                                       std::vector<u64> tail_grid, RngKey key) {
    if (x_samples < 1) throw std::invalid_argument("need at least one sample");
    if (tail_grid.empty()) tail_grid = default_tail_grid(N);
    for (u64 t : tail_grid)
        if (t < 1 || t > N) throw std::invalid_argument("tail start outside [1, N]");
    const int q = f.q();
    if (y_center.q != static_cast<u32>(q)) throw std::invalid_argument("center grid differs");
    const std::vector<u128> centers(N + 1, y_center.k);
    const auto radii = radius_table(b, N, q);
    const auto counts = limsup_tail_counts(f, centers, radii, N, tail_grid, key, 0, x_samples);
    LimsupEstimate est;
    est.horizon = N;
    est.samples = x_samples;
    est.tail_starts = tail_grid;
    for (u64 c : counts)
        est.fractions.push_back(static_cast<double>(c) / static_cast<double>(x_samples));
    return est;
}

// Marchese hypothesis: b_i and i*b_i both non-increasing. Exact for rational
// kinds whose products stay small; long double otherwise (exact for short
// decimal entries, the intended explicit-file shape).
inline void check_marchese(const TargetSequence& b, u64 N) {
    switch (b.kind()) {
        case TargetSequence::Kind::harmonic:      // i * c/i = c
        case TargetSequence::Kind::log_harmonic:  // c / log(i+1)
            return;
        case TargetSequence::Kind::constant:
            throw std::invalid_argument("i*b_i increases for constant sequences (Marchese hypothesis)");
        default: break;
    }
    long double prev = std::numeric_limits<long double>::infinity();
    for (u64 i = 1; i <= N; ++i) {
        const long double v = static_cast<long double>(i) * static_cast<long double>(b.value(i));
        if (v > prev)
            throw std::invalid_argument("i*b_i increases at index " + std::to_string(i) +
                                        " (Marchese hypothesis)");
        prev = v;
    }
}

inline HitRecord discontinuity_run(const IntervalMap& T, UnitPoint delta, UnitPoint delta_prime,
                                   const TargetSequence& b, u64 N) {
    if (T.kind() != IntervalMap::Kind::iet)
        throw std::invalid_argument("discontinuity run requires an interval exchange");
    const int q = T.q();
    if (delta.q != static_cast<u32>(q) || delta_prime.q != static_cast<u32>(q))
        throw std::invalid_argument("points and map live on different grids");
    const auto cuts = T.discontinuities();
    auto is_cut = [&](UnitPoint p) {
        return std::find(cuts.begin(), cuts.end(), p) != cuts.end();
    };
    if (!is_cut(delta) || !is_cut(delta_prime))
        throw std::invalid_argument("delta and delta' must be discontinuities of T");
    const AdmissibilityReport rep = check_admissible(b, N);
    if (!rep.admissible)
        throw std::invalid_argument("sequence inadmissible: " + rep.reason);
    check_marchese(b, N);
    const std::vector<u128> centers(N + 1, delta.k);
    return hit_record_from_orbit(T, delta_prime.k, centers, radius_table(b, N, q), N);
}

struct HittingTime {
    u64 tau{0};
    bool found{false};
};

// tau_r = min n >= 1 with circle_distance(f^n x, y) < r, grid-strict.
inline HittingTime hitting_time(const IntervalMap& f, UnitPoint x, UnitPoint y, Radius r,
                                u64 n_max) {
    const int q = f.q();
    if (x.q != static_cast<u32>(q) || y.q != static_cast<u32>(q) || r.q != static_cast<u32>(q))
        throw std::invalid_argument("points and map live on different grids");
    HittingTime ht;
    detail::with_stepper(f, [&](auto step) {
        u128 z = x.k;
        for (u64 n = 1; n <= n_max; ++n) {
            z = step(z);
            if (circle_distance_raw(z, y.k, q) < r.r) {
                ht.tau = n;
                ht.found = true;
                return;
            }
        }
    });
    return ht;
}

struct LoglawPoint {
    int exponent{0};  // r = 2^-exponent
    u64 tau{0};
    bool censored{false};
};

struct LoglawProfile {
    std::vector<LoglawPoint> points;
    double slope{0};
    u64 fitted{0};  // points entering the fit
};

// Single orbit pass; radii 2^-e are exact grid values, tau recorded when the
// distance first drops below each level. Censored points are excluded from
// the least-squares fit of log tau against -log r.
inline LoglawProfile loglaw_profile(const IntervalMap& f, UnitPoint x, UnitPoint y, int e_min,
                                    int e_max, u64 n_max) {
    const int q = f.q();
    if (e_min < 1 || e_min > e_max || e_max >= q)
        throw std::invalid_argument("radius exponents must satisfy 1 <= e_min <= e_max < Q");
    std::vector<LoglawPoint> pts;
    for (int e = e_min; e <= e_max; ++e) pts.push_back({e, 0, true});
    detail::with_stepper(f, [&](auto step) {
        u128 z = x.k;
        size_t next = 0;  // radii descend with e, hit in order
        for (u64 n = 1; n <= n_max && next < pts.size(); ++n) {
            z = step(z);
            const u128 d = circle_distance_raw(z, y.k, q);
            while (next < pts.size() && d < (u128{1} << (q - pts[next].exponent))) {
                pts[next].tau = n;
                pts[next].censored = false;
                ++next;
            }
        }
    });
    LoglawProfile prof;
    prof.points = pts;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    u64 m = 0;
    for (const auto& p : prof.points) {
        if (p.censored) continue;
        const double px = static_cast<double>(p.exponent) * std::log(2.0);  // -log r
        const double py = std::log(static_cast<double>(p.tau));
        sx += px;
        sy += py;
        sxx += px * px;
        sxy += px * py;
        m += 1;
    }
    prof.fitted = m;
    if (m >= 2) {
        const double dm = static_cast<double>(m);
        prof.slope = (sxy - sx * sy / dm) / (sxx - sx * sx / dm);
    }
    return prof;
}

struct SurveyResult {
    double good_fraction{0};
    double threshold{0};
    std::vector<double> tail_fractions;   // per sampled alpha, at tail N/2
    std::array<u64, 10> histogram{};      // tail fractions binned by tenths
};

// Tail fraction at N/2 for the a-th sampled alpha (odd numerator). The key
// layout is fixed so callers can fan out over a without changing results.
inline double survey_single_alpha(const IntervalMap& f, UnitPoint x,
                                  const std::vector<u128>& radii, u64 N, u64 a, u64 y_samples,
                                  RngKey key, UnitPoint* alpha_out = nullptr) {
    const int q = f.q();
    UnitPoint alpha = sample_uniform(RngKey{key.seed, key.stream + 1}, a, q, 0);
    alpha.k |= 1;  // odd numerator: excludes the rational exceptional set
    if (alpha_out) *alpha_out = alpha;
    const auto centers = rotation_centers(alpha, x, N);
    const std::vector<u64> tails = {std::max<u64>(1, N / 2)};
    const auto counts = limsup_tail_counts(f, centers, radii, N, tails,
                                           RngKey{key.seed, key.stream + 2 + a}, 0, y_samples);
    return static_cast<double>(counts[0]) / static_cast<double>(y_samples);
}

// Samples alpha, runs a reduced tail check per alpha, and classifies alpha as
// good when the tail fraction at N/2 exceeds theta.
inline SurveyResult alpha_survey_with_radii(const IntervalMap& f, UnitPoint x,
                                            const std::vector<u128>& radii, u64 N,
                                            u64 alpha_samples, u64 y_samples, double theta,
                                            RngKey key) {
    if (alpha_samples < 1 || y_samples < 1) throw std::invalid_argument("need samples >= 1");
    const int q = f.q();
    if (x.q != static_cast<u32>(q)) throw std::invalid_argument("x grid differs from map grid");
    if (radii.size() < N + 1) throw std::invalid_argument("radius table shorter than horizon");
    SurveyResult res;
    res.threshold = theta;
    u64 good = 0;
    for (u64 a = 0; a < alpha_samples; ++a) {
        const double frac = survey_single_alpha(f, x, radii, N, a, y_samples, key);
        res.tail_fractions.push_back(frac);
        const size_t bin = std::min<size_t>(9, static_cast<size_t>(frac * 10.0));
        res.histogram[bin] += 1;
        if (frac > theta) good += 1;
    }
    res.good_fraction = static_cast<double>(good) / static_cast<double>(alpha_samples);
    return res;
}

inline SurveyResult alpha_survey(const IntervalMap& f, UnitPoint x, const TargetSequence& b,
                                 u64 N, u64 alpha_samples, u64 y_samples, double theta,
                                 RngKey key) {
    return alpha_survey_with_radii(f, x, radius_table(b, N, f.q()), N, alpha_samples, y_samples,
                                   theta, key);
}

struct DiscrepancyPoint {
    u64 n{0};
    double dstar{0};
};

// Star discrepancy of (R_alpha^i x, f^i y) over anchored dyadic boxes at
// depth 6 (corners on the 64x64 grid), reported at decade checkpoints.
inline std::vector<DiscrepancyPoint> equidistribution_check(const IntervalMap& f, UnitPoint alpha,
                                                            UnitPoint x, UnitPoint y, u64 N) {
    if (N < 1000) throw std::invalid_argument("equidistribution check needs N >= 10^3");
    const int q = f.q();
    if (alpha.q != static_cast<u32>(q) || x.q != static_cast<u32>(q) || y.q != static_cast<u32>(q))
        throw std::invalid_argument("points and map live on different grids");
    const u128 mask = grid_mask(q);
    std::array<std::array<u64, 64>, 64> cells{};
    std::vector<u64> checkpoints;
    for (u64 c = 1000; c <= N; c *= 10) checkpoints.push_back(c);
    if (checkpoints.empty() || checkpoints.back() != N) checkpoints.push_back(N);
    std::vector<DiscrepancyPoint> profile;
    detail::with_stepper(f, [&](auto step) {
        u128 rx = x.k, z = y.k;
        size_t next = 0;
        for (u64 i = 1; i <= N; ++i) {
            rx = (rx + alpha.k) & mask;
            z = step(z);
            cells[static_cast<size_t>(rx >> (q - 6))][static_cast<size_t>(z >> (q - 6))] += 1;
            if (next < checkpoints.size() && i == checkpoints[next]) {
                // cumulative counts over the 64x64 grid
                std::array<std::array<u64, 65>, 65> pref{};
                for (size_t r = 0; r < 64; ++r)
                    for (size_t c = 0; c < 64; ++c)
                        pref[r + 1][c + 1] =
                            cells[r][c] + pref[r][c + 1] + pref[r + 1][c] - pref[r][c];
                double dstar = 0;
                const double inv_n = 1.0 / static_cast<double>(i);
                for (size_t r = 1; r <= 64; ++r)
                    for (size_t c = 1; c <= 64; ++c) {
                        const double emp = static_cast<double>(pref[r][c]) * inv_n;
                        const double vol = (static_cast<double>(r) / 64.0) *
                                           (static_cast<double>(c) / 64.0);
                        dstar = std::max(dstar, std::abs(emp - vol));
                    }
                profile.push_back({i, dstar});
                ++next;
            }
        }
    });
    return profile;
}

}  // namespace stp
