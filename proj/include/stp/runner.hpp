#pragma once

#include <chrono>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "stp/config.hpp"
#include "stp/experiments.hpp"
#include "stp/geometry.hpp"
#include "stp/report.hpp"

// Verb orchestration: builds objects from a validated config, fans work out
// over a thread pool partitioned by sample index, and writes CSV/JSON/SVG
// artifacts plus a manifest (written last, atomically). Results are
// byte-identical across runs and worker counts because every sample draws
// from a keyed counter RNG and aggregation is integer and index-ordered.

namespace stp {

struct GateResult {
    std::string name;
    bool passed{false};
    std::string detail;
};

struct RunResult {
    int exit_code{0};  // 0 ok, 1 usage/config/io error, 2 gate failure
    std::string out_dir;
    std::vector<GateResult> gates;
    std::string message;
};

namespace detail {

// Fixed RNG stream layout (documented in the README):
//   0       map construction draws
//   10-13   point resolution for x, alpha, y, center
//   1000+i  Monte Carlo draws of measure verb entry i
//   2000    union-bound Monte Carlo draws
//   3000    limsup-family orbit starts
//   4000+d  log-law draw d
//   5000+d  discontinuity-run draw d
//   6000+i  interval-lemma instance i
//   7000    alpha survey (internal +1/+2+a layout)
inline constexpr u64 kStreamMap = 0;
inline constexpr u64 kStreamX = 10, kStreamAlpha = 11, kStreamY = 12, kStreamCenter = 13;
inline constexpr u64 kStreamMeasure = 1000;
inline constexpr u64 kStreamUnion = 2000;
inline constexpr u64 kStreamOrbit = 3000;
inline constexpr u64 kStreamLoglaw = 4000;
inline constexpr u64 kStreamMarchese = 5000;
inline constexpr u64 kStreamLemma = 6000;
inline constexpr u64 kStreamSurvey = 7000;

template <typename Fn>
void run_partitioned(u64 total, u64 workers, Fn body) {
    workers = std::max<u64>(1, std::min(workers, total == 0 ? 1 : total));
    if (workers == 1) {
        body(0, 0, total);
        return;
    }
    std::vector<std::thread> pool;
    const u64 chunk = (total + workers - 1) / workers;
    for (u64 w = 0; w < workers; ++w) {
        const u64 lo = w * chunk;
        const u64 hi = std::min(total, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([=, &body] { body(w, lo, hi); });
    }
    for (auto& t : pool) t.join();
}

inline UnitPoint resolve_point(const std::string& s, int q, u64 seed, u64 stream, bool odd) {
    UnitPoint p(0, q);
    if (s == "random") {
        p = sample_uniform(RngKey{seed, stream}, 0, q, 0);
    } else {
        double v = 0;
        if (!parse_double_value(s, v)) throw std::invalid_argument("bad point value: " + s);
        p = quantize(v, q);
    }
    if (odd) p.k |= 1;
    return p;
}

// Radius table for either a plain sequence or a bprime(...) derivation.
struct ResolvedSequence {
    SequenceSpec spec;
    std::optional<DerivedSequence> derived;

    std::vector<u128> radii(u64 N, int q) const {
        std::vector<u128> r(N + 1, 0);
        if (derived) {
            for (u64 i = 1; i <= N; ++i) r[i] = derived->radius(i, q).r;
        } else {
            for (u64 i = 1; i <= N; ++i) r[i] = spec.base.radius(i, q).r;
        }
        return r;
    }

    double value(u64 i) const { return derived ? derived->value(i) : spec.base.value(i); }
    Radius radius_at(u64 i, int q) const {
        return derived ? derived->radius(i, q) : spec.base.radius(i, q);
    }
};

inline ResolvedSequence resolve_sequence(const std::string& seq_spec, u64 horizon) {
    ResolvedSequence rs{parse_sequence(seq_spec), std::nullopt};
    if (rs.spec.bprime) rs.derived.emplace(rs.spec.base, horizon);
    return rs;
}

inline ordered_json realized_map_json(const IntervalMap& f) {
    ordered_json j;
    const int q = f.q();
    switch (f.kind()) {
        case IntervalMap::Kind::rotation:
            j["kind"] = "rotation";
            j["alpha_hex"] = to_hex(f.as_rotation().alpha.k);
            j["alpha"] = fmt_float(f.as_rotation().alpha.value());
            break;
        case IntervalMap::Kind::times_odd:
            j["kind"] = "times_odd";
            j["multiplier"] = static_cast<u64>(f.as_times_odd().multiplier);
            break;
        default: {
            const Iet& t = f.as_iet();
            j["kind"] = "iet";
            j["intervals"] = t.lengths().size();
            std::string perm;
            for (u32 v : t.permutation().images) perm += std::to_string(v);
            j["permutation"] = perm;
            ordered_json lens = ordered_json::array();
            for (const auto& L : t.lengths()) lens.push_back(to_hex(L));
            j["length_hex"] = lens;
            break;
        }
    }
    j["Q"] = q;
    return j;
}

inline std::string gate_flag(const std::vector<GateResult>& gates) {
    for (const auto& g : gates)
        if (!g.passed) return g.name;
    return "";
}

// The canonical text is already the sorted effective config; echo it as JSON.
inline ordered_json config_echo(const RunConfig& cfg) {
    ordered_json j;
    size_t pos = 0;
    const std::string& t = cfg.canonical_text;
    while (pos < t.size()) {
        const size_t nl = t.find('\n', pos);
        const std::string line = t.substr(pos, nl - pos);
        pos = nl == std::string::npos ? t.size() : nl + 1;
        const size_t eq = line.find('=');
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
}

}  // namespace detail

struct VerbOutput {
    std::vector<std::pair<std::string, std::string>> files;  // name -> bytes
    ordered_json summary;
    std::vector<GateResult> gates;
    ordered_json realized;
};

namespace verbs {

inline VerbOutput measure_vn(const RunConfig& cfg) {
    VerbOutput out;
    const IntervalMap f = parse_map(cfg.map_spec, cfg.q, RngKey{cfg.seed, detail::kStreamMap});
    u64 max_idx = 1;
    for (u64 n : cfg.n_list) max_idx = std::max(max_idx, cfg.t * n);
    const auto rs = detail::resolve_sequence(cfg.seq_spec, max_idx);
    const bool run_mc = cfg.method == "mc" || cfg.method == "both";
    const bool run_ex = cfg.method == "exhaustive" || cfg.method == "both";
    if (run_ex && cfg.q > 12)
        throw std::invalid_argument("exhaustive method requires Q <= 12");

    CsvWriter csv({"n", "t", "closed_form_measure", "estimate_measure", "std_error_measure",
                   "samples_count", "method"});
    ordered_json rows = ordered_json::array();
    for (size_t i = 0; i < cfg.n_list.size(); ++i) {
        const u64 n = cfg.n_list[i];
        StripSpec spec{f, n, rs.radius_at(cfg.t * n, cfg.q), cfg.t};
        const double closed = 2.0 * spec.radius.value();
        auto emit = [&](const MeasureEstimate& est) {
            csv.row({std::to_string(n), std::to_string(cfg.t), fmt_float(closed),
                     fmt_float(est.value), fmt_float(est.std_error), std::to_string(est.samples),
                     method_name(est.method)});
            ordered_json r;
            r["n"] = n;
            r["closed_form"] = closed;
            r["estimate"] = est.value;
            r["std_error"] = est.std_error;
            r["method"] = method_name(est.method);
            rows.push_back(r);
        };
        if (run_mc) {
            const RngKey key{cfg.seed, detail::kStreamMeasure + i};
            std::vector<u64> partial(cfg.workers, 0);
            detail::run_partitioned(cfg.samples, cfg.workers, [&](u64 w, u64 lo, u64 hi) {
                partial[w] = detail::mc_hit_count(
                    [&](UnitPoint a, UnitPoint y) { return strip_member(spec, a, y); }, key,
                    cfg.q, lo, hi);
            });
            u64 hits = 0;
            for (u64 p : partial) hits += p;
            const MeasureEstimate est = binomial_estimate(hits, cfg.samples);
            emit(est);
            const double sigma = std::max(est.std_error, 1e-12);
            const bool ok = std::abs(est.value - closed) <= 4.0 * sigma;
            out.gates.push_back({"strip_mc_4sigma_n" + std::to_string(n), ok,
                                 "estimate " + fmt_float(est.value) + " vs " + fmt_float(closed)});
        }
        if (run_ex) {
            const StripMeasureResult ex = measure_strip_exhaustive(spec);
            emit(ex.estimate);
            const double cell = std::ldexp(1.0, -cfg.q);
            const bool ok = std::abs(ex.estimate.value - closed) <= cell;
            out.gates.push_back({"strip_exhaustive_cell_n" + std::to_string(n), ok,
                                 "count fraction " + fmt_float(ex.estimate.value)});
        }
    }
    out.files.emplace_back("measure_vn.csv", csv.str());
    out.summary["rows"] = rows;
    out.realized["map"] = detail::realized_map_json(f);
    return out;
}

inline VerbOutput measure_pair(const RunConfig& cfg) {
    VerbOutput out;
    const IntervalMap f = parse_map(cfg.map_spec, cfg.q, RngKey{cfg.seed, detail::kStreamMap});
    u64 max_idx = 1;
    for (const auto& [j, k] : cfg.pairs) max_idx = std::max(max_idx, cfg.t * std::max(j, k));
    const auto rs = detail::resolve_sequence(cfg.seq_spec, max_idx);

    CsvWriter csv({"j", "k", "closed_form_measure", "estimate_measure", "std_error_measure",
                   "samples_count", "method", "pieces_count", "piece_area_measure",
                   "integral_area_measure"});
    ordered_json rows = ordered_json::array();
    for (size_t i = 0; i < cfg.pairs.size(); ++i) {
        const auto [j, k] = cfg.pairs[i];
        if (j >= k) throw std::invalid_argument("pairs must satisfy j < k");
        StripSpec sj{f, j, rs.radius_at(cfg.t * j, cfg.q), cfg.t};
        StripSpec sk{f, k, rs.radius_at(cfg.t * k, cfg.q), cfg.t};
        const double bj = sj.radius.value(), bk = sk.radius.value();
        const double closed = 4.0 * bj * bk;
        const RngKey key{cfg.seed, detail::kStreamMeasure + 100 + i};
        std::vector<u64> partial(cfg.workers, 0);
        detail::run_partitioned(cfg.samples, cfg.workers, [&](u64 w, u64 lo, u64 hi) {
            partial[w] = detail::mc_hit_count(
                [&](UnitPoint a, UnitPoint y) {
                    return strip_member(sj, a, y) && strip_member(sk, a, y);
                },
                key, cfg.q, lo, hi);
        });
        u64 hits = 0;
        for (u64 p : partial) hits += p;
        const MeasureEstimate est = binomial_estimate(hits, cfg.samples);
        const auto dec = parallelogram_decomposition(cfg.t * j, cfg.t * k, bj, bk);
        csv.row({std::to_string(j), std::to_string(k), fmt_float(closed), fmt_float(est.value),
                 fmt_float(est.std_error), std::to_string(est.samples), method_name(est.method),
                 std::to_string(dec.pieces), fmt_float(dec.piece_area),
                 fmt_float(dec.integral_area)});
        ordered_json r;
        r["j"] = j;
        r["k"] = k;
        r["closed_form"] = closed;
        r["estimate"] = est.value;
        r["std_error"] = est.std_error;
        r["pieces"] = dec.pieces;
        r["integral_area"] = dec.integral_area;
        rows.push_back(r);
        const double sigma = std::max(est.std_error, 1e-12);
        out.gates.push_back({"pair_mc_4sigma_" + std::to_string(j) + "_" + std::to_string(k),
                             std::abs(est.value - closed) <= 4.0 * sigma,
                             "estimate " + fmt_float(est.value) + " vs " + fmt_float(closed)});
        out.gates.push_back({"pair_decomposition_" + std::to_string(j) + "_" + std::to_string(k),
                             dec.total_area == closed &&
                                 std::abs(dec.integral_area - closed) <= 1e-12,
                             "integral " + fmt_float(dec.integral_area)});
    }
    out.files.emplace_back("measure_pair.csv", csv.str());
    out.summary["rows"] = rows;
    out.realized["map"] = detail::realized_map_json(f);
    return out;
}

inline VerbOutput union_bound(const RunConfig& cfg) {
    VerbOutput out;
    const IntervalMap f = parse_map(cfg.map_spec, cfg.q, RngKey{cfg.seed, detail::kStreamMap});
    const SequenceSpec seq = parse_sequence(cfg.seq_spec);
    if (!seq.bprime) throw std::invalid_argument("union-bound requires a bprime(...) sequence");

    u64 horizon = std::max<u64>(cfg.n_horizon, 1024);
    std::optional<DerivedSequence> bp;
    std::optional<UnionWindow> win;
    for (;;) {
        bp.emplace(seq.base, horizon);
        try {
            win = union_bound_select_N(cfg.t, cfg.n0, *bp);
            break;
        } catch (const std::runtime_error&) {
            if (horizon >= (u64{1} << 31)) throw;
            horizon *= 4;
        }
    }
    UnionSpec u{cfg.t, cfg.n0, win->N};
    const RngKey key{cfg.seed, detail::kStreamUnion};
    std::vector<u64> partial(cfg.workers, 0);
    detail::run_partitioned(cfg.samples, cfg.workers, [&](u64 w, u64 lo, u64 hi) {
        partial[w] = detail::mc_hit_count(
            [&](UnitPoint a, UnitPoint y) { return union_member(f, *bp, u, a, y); }, key, cfg.q,
            lo, hi);
    });
    u64 hits = 0;
    for (u64 p : partial) hits += p;
    const MeasureEstimate est = binomial_estimate(hits, cfg.samples);

    CsvWriter csv({"t", "n0", "N", "two_sigma_measure", "window_ok", "certified_bound_measure",
                   "estimate_measure", "std_error_measure", "samples_count", "method"});
    csv.row({std::to_string(cfg.t), std::to_string(cfg.n0), std::to_string(win->N),
             fmt_float(win->two_sigma), win->window_ok ? "true" : "false",
             fmt_float(win->certified_bound), fmt_float(est.value), fmt_float(est.std_error),
             std::to_string(est.samples), method_name(est.method)});
    out.files.emplace_back("union_bound.csv", csv.str());
    out.summary["selected_N"] = win->N;
    out.summary["two_sigma"] = win->two_sigma;
    out.summary["certified_bound"] = win->certified_bound;
    out.summary["estimate"] = est.value;
    out.summary["std_error"] = est.std_error;
    out.gates.push_back({"window_in_range", win->window_ok,
                         "2*sum = " + fmt_float(win->two_sigma)});
    out.gates.push_back({"certified_above_eighth", win->certified_bound > 0.125,
                         "bound = " + fmt_float(win->certified_bound)});
    out.gates.push_back({"mc_above_eighth_4sigma",
                         est.value - 4.0 * est.std_error > 0.125,
                         "estimate = " + fmt_float(est.value)});
    out.realized["map"] = detail::realized_map_json(f);
    out.realized["derive_horizon"] = horizon;
    return out;
}

inline VerbOutput interval_lemma(const RunConfig& cfg) {
    VerbOutput out;
    if (cfg.k_div < 101) throw std::invalid_argument("k must be >= 101 for a valid J interval");
    if (cfg.cells % cfg.k_div != 0) throw std::invalid_argument("k must divide cells");
    struct Row {
        u64 sigma_pct, len, start;
        IntervalLemmaResult res;
    };
    std::vector<Row> rows(cfg.instances);
    detail::run_partitioned(cfg.instances, cfg.workers, [&](u64, u64 lo, u64 hi) {
        for (u64 i = lo; i < hi; ++i) {
            SequentialRng rng(RngKey{cfg.seed, detail::kStreamLemma + i});
            const u64 sigma_pct = 5 + rng.next_below(81);  // sigma in [0.05, 0.85]
            const Rational64 sigma{sigma_pct, 100};
            const QuantizedSet B = random_invariant_set(cfg.cells, cfg.k_div, sigma, rng);
            const u64 len_min = (100 * cfg.cells) / cfg.k_div + 1;
            const u64 len_max = (101 * cfg.cells + cfg.k_div - 1) / cfg.k_div - 1;
            const u64 len = len_min + rng.next_below(len_max - len_min + 1);
            const u64 start = rng.next_below(cfg.cells);
            rows[i] = {sigma_pct, len, start,
                       interval_lemma_check(B, cfg.k_div, start, len, sigma)};
        }
    });
    CsvWriter csv({"instance", "k", "sigma_density", "j_start_cells", "j_len_cells",
                   "measured_measure", "bound_measure", "passed", "method"});
    u64 passed = 0;
    for (u64 i = 0; i < cfg.instances; ++i) {
        const auto& r = rows[i];
        csv.row({std::to_string(i), std::to_string(cfg.k_div),
                 fmt_float(static_cast<double>(r.sigma_pct) / 100.0), std::to_string(r.start),
                 std::to_string(r.len), fmt_float(r.res.measured_ratio), fmt_float(r.res.bound),
                 r.res.passed ? "true" : "false", "exact_count"});
        if (r.res.passed) passed += 1;
    }
    out.files.emplace_back("interval_lemma.csv", csv.str());
    out.summary["instances"] = cfg.instances;
    out.summary["passed"] = passed;
    out.gates.push_back({"all_instances_pass", passed == cfg.instances,
                         std::to_string(passed) + "/" + std::to_string(cfg.instances)});
    return out;
}

// Shared by limsup, kurzweil, and fixed-center.
inline VerbOutput tail_family(const RunConfig& cfg) {
    VerbOutput out;
    IntervalMap f = cfg.verb == "kurzweil"
                        ? IntervalMap{Rotation{UnitPoint(0, cfg.q)}}
                        : parse_map(cfg.map_spec, cfg.q, RngKey{cfg.seed, detail::kStreamMap});
    const u64 N = cfg.n_horizon;
    const auto rs = detail::resolve_sequence(cfg.seq_spec, N);
    const auto radii = rs.radii(N, cfg.q);

    std::vector<u128> centers;
    UnitPoint alpha(0, cfg.q), x(0, cfg.q);
    if (cfg.verb == "fixed-center") {
        const UnitPoint c =
            detail::resolve_point(cfg.center_str, cfg.q, cfg.seed, detail::kStreamCenter, false);
        centers.assign(N + 1, c.k);
        out.realized["center_hex"] = to_hex(c.k);
    } else {
        alpha = detail::resolve_point(cfg.alpha_str, cfg.q, cfg.seed, detail::kStreamAlpha, true);
        x = detail::resolve_point(cfg.x_str, cfg.q, cfg.seed, detail::kStreamX, false);
        centers = rotation_centers(alpha, x, N);
        out.realized["alpha_hex"] = to_hex(alpha.k);
        out.realized["x_hex"] = to_hex(x.k);
    }

    std::vector<u64> tails = cfg.tails.empty() ? default_tail_grid(N) : cfg.tails;
    for (u64 t : tails)
        if (t < 1 || t > N) throw std::invalid_argument("tail start outside [1, N]");

    const u64 samples = cfg.y_samples;
    std::vector<u64> lasts(samples, 0);
    const RngKey key{cfg.seed, detail::kStreamOrbit};
    detail::run_partitioned(samples, cfg.workers, [&](u64, u64 lo, u64 hi) {
        detail::with_stepper(f, [&](auto step) {
            for (u64 s = lo; s < hi; ++s) {
                const u128 y0 = sample_uniform(key, s, cfg.q, 0).k;
                lasts[s] =
                    detail::last_hit_index(step, y0, centers.data(), radii.data(), N, cfg.q);
            }
        });
    });

    CsvWriter csv({"sample", "last_hit_index_steps", "method"});
    for (u64 s = 0; s < samples; ++s)
        csv.row({std::to_string(s), std::to_string(lasts[s]), "monte_carlo"});
    out.files.emplace_back(cfg.verb == "kurzweil"      ? "kurzweil.csv"
                           : cfg.verb == "fixed-center" ? "fixed_center.csv"
                                                        : "limsup.csv",
                           csv.str());

    ordered_json frac_rows = ordered_json::array();
    std::vector<PlotSeries> plot(1);
    plot[0].name = "tail fraction";
    double frac_half = -1;
    for (u64 t : tails) {
        u64 c = 0;
        for (u64 L : lasts)
            if (L >= t) c += 1;
        const double frac = static_cast<double>(c) / static_cast<double>(samples);
        ordered_json r;
        r["tail_start"] = t;
        r["fraction"] = frac;
        frac_rows.push_back(r);
        plot[0].points.emplace_back(static_cast<double>(t), frac);
        if (t == std::max<u64>(1, N / 2)) frac_half = frac;
    }
    if (frac_half < 0 && !tails.empty()) {
        u64 c = 0;
        for (u64 L : lasts)
            if (L >= tails.back()) c += 1;
        frac_half = static_cast<double>(c) / static_cast<double>(samples);
    }
    out.summary["tail_fractions"] = frac_rows;
    out.summary["horizon"] = N;
    out.summary["samples"] = samples;
    out.files.emplace_back("tail_fraction.svg",
                           svg_line_plot("tail-hit fraction", "tail start n", "fraction", plot));
    if (cfg.gate_tail) {
        const bool ok = frac_half >= *cfg.gate_tail;
        out.gates.push_back({"tail_fraction_gate", ok,
                             "fraction " + fmt_float(frac_half) + " vs gate " +
                                 fmt_float(*cfg.gate_tail) +
                                 (ok ? "" : " (bad sample or slow convergence not distinguishable)")});
    }
    out.realized["map"] = detail::realized_map_json(f);
    return out;
}

inline VerbOutput marchese(const RunConfig& cfg) {
    VerbOutput out;
    const SequenceSpec seq = parse_sequence(cfg.seq_spec);
    if (seq.bprime)
        throw std::invalid_argument("marchese verb needs a direct sequence, not bprime(...)");
    u64 d = 3;
    if (cfg.map_spec.rfind("iet:", 0) == 0) {
        const auto rest = cfg.map_spec.substr(4);
        d = std::stoull(rest.substr(0, rest.find(':')));
    }
    struct Row {
        std::string perm;
        u64 hit_count{0};
        u64 first_hit{0};
    };
    std::vector<Row> rows(cfg.draws);
    detail::run_partitioned(cfg.draws, cfg.workers, [&](u64, u64 lo, u64 hi) {
        for (u64 i = lo; i < hi; ++i) {
            SequentialRng rng(RngKey{cfg.seed, detail::kStreamMarchese + i});
            const Permutation perm = random_irreducible_permutation(d, rng);
            const IntervalMap T{random_iet(d, perm, rng, cfg.q)};
            const auto cuts = T.discontinuities();
            const UnitPoint delta = cuts[rng.next_below(cuts.size())];
            const UnitPoint delta_p = cuts[rng.next_below(cuts.size())];
            const HitRecord rec = discontinuity_run(T, delta, delta_p, seq.base, cfg.n_horizon);
            std::string ps;
            for (u32 v : perm.images) ps += std::to_string(v);
            rows[i] = {ps, rec.indices.size(), rec.indices.empty() ? 0 : rec.indices.front()};
        }
    });
    CsvWriter csv({"draw", "permutation", "hit_count", "first_hit_index_steps", "method"});
    u64 nonzero = 0;
    for (u64 i = 0; i < cfg.draws; ++i) {
        csv.row({std::to_string(i), rows[i].perm, std::to_string(rows[i].hit_count),
                 std::to_string(rows[i].first_hit), "exact_orbit"});
        if (rows[i].hit_count > 0) nonzero += 1;
    }
    out.files.emplace_back("marchese.csv", csv.str());
    out.summary["draws"] = cfg.draws;
    out.summary["nonzero_hit_draws"] = nonzero;
    out.gates.push_back({"majority_draws_hit", 2 * nonzero > cfg.draws,
                         std::to_string(nonzero) + "/" + std::to_string(cfg.draws)});
    return out;
}

inline VerbOutput loglaw(const RunConfig& cfg) {
    VerbOutput out;
    u64 d = 4;
    if (cfg.map_spec.rfind("iet:", 0) == 0) {
        const auto rest = cfg.map_spec.substr(4);
        d = std::stoull(rest.substr(0, rest.find(':')));
    }
    std::vector<LoglawProfile> profiles(cfg.draws);
    detail::run_partitioned(cfg.draws, cfg.workers, [&](u64, u64 lo, u64 hi) {
        for (u64 i = lo; i < hi; ++i) {
            SequentialRng rng(RngKey{cfg.seed, detail::kStreamLoglaw + i});
            const Permutation perm = random_irreducible_permutation(d, rng);
            const IntervalMap f{random_iet(d, perm, rng, cfg.q)};
            const UnitPoint x = rng.next_point(cfg.q);
            const UnitPoint y = rng.next_point(cfg.q);
            profiles[i] = loglaw_profile(f, x, y, cfg.e_min, cfg.e_max, cfg.n_max);
        }
    });
    CsvWriter csv({"draw", "exponent", "radius_measure", "tau_steps", "censored", "method"});
    std::vector<PlotSeries> plot;
    u64 in_range = 0;
    ordered_json slopes = ordered_json::array();
    for (u64 i = 0; i < cfg.draws; ++i) {
        PlotSeries s;
        s.name = "draw " + std::to_string(i);
        for (const auto& p : profiles[i].points) {
            csv.row({std::to_string(i), std::to_string(p.exponent),
                     fmt_float(std::ldexp(1.0, -p.exponent)), std::to_string(p.tau),
                     p.censored ? "true" : "false", "exact_orbit"});
            if (!p.censored)
                s.points.emplace_back(p.exponent * std::log(2.0),
                                      std::log(static_cast<double>(p.tau)));
        }
        plot.push_back(std::move(s));
        slopes.push_back(profiles[i].slope);
        if (profiles[i].slope >= 0.8 && profiles[i].slope <= 1.2) in_range += 1;
    }
    out.files.emplace_back("loglaw.csv", csv.str());
    out.files.emplace_back("loglaw.svg",
                           svg_line_plot("hitting-time log law", "-log r", "log tau", plot));
    out.summary["slopes"] = slopes;
    out.summary["in_range"] = in_range;
    out.gates.push_back({"slopes_in_band",
                         5 * in_range >= 4 * cfg.draws,  // >= 80% of draws
                         std::to_string(in_range) + "/" + std::to_string(cfg.draws) +
                             " slopes in [0.8, 1.2]"});
    return out;
}

inline VerbOutput alpha_survey_verb(const RunConfig& cfg) {
    VerbOutput out;
    const IntervalMap f = parse_map(cfg.map_spec, cfg.q, RngKey{cfg.seed, detail::kStreamMap});
    const u64 N = cfg.n_horizon;
    const auto rs = detail::resolve_sequence(cfg.seq_spec, N);
    const auto radii = rs.radii(N, cfg.q);
    const UnitPoint x =
        detail::resolve_point(cfg.x_str, cfg.q, cfg.seed, detail::kStreamX, false);
    const RngKey key{cfg.seed, detail::kStreamSurvey};

    std::vector<double> fracs(cfg.alpha_samples, 0);
    std::vector<UnitPoint> alphas(cfg.alpha_samples, UnitPoint(0, cfg.q));
    detail::run_partitioned(cfg.alpha_samples, cfg.workers, [&](u64, u64 lo, u64 hi) {
        for (u64 a = lo; a < hi; ++a)
            fracs[a] = survey_single_alpha(f, x, radii, N, a, cfg.y_samples, key, &alphas[a]);
    });

    CsvWriter csv({"alpha_index", "alpha_hex", "alpha_value", "tail_fraction", "good", "method"});
    std::array<u64, 10> hist{};
    u64 good = 0;
    for (u64 a = 0; a < cfg.alpha_samples; ++a) {
        const bool g = fracs[a] > cfg.theta;
        if (g) good += 1;
        hist[std::min<size_t>(9, static_cast<size_t>(fracs[a] * 10.0))] += 1;
        csv.row({std::to_string(a), to_hex(alphas[a].k), fmt_float(alphas[a].value()),
                 fmt_float(fracs[a]), g ? "true" : "false", "monte_carlo"});
    }
    const double good_frac = static_cast<double>(good) / static_cast<double>(cfg.alpha_samples);
    out.files.emplace_back("alpha_survey.csv", csv.str());
    out.summary["good_fraction"] = good_frac;
    out.summary["theta"] = cfg.theta;
    ordered_json h = ordered_json::array();
    for (u64 b : hist) h.push_back(b);
    out.summary["tail_fraction_histogram"] = h;
    if (cfg.gate_tail)
        out.gates.push_back({"good_fraction_gate", good_frac >= *cfg.gate_tail,
                             fmt_float(good_frac) + " vs gate " + fmt_float(*cfg.gate_tail)});
    out.realized["map"] = detail::realized_map_json(f);
    out.realized["x_hex"] = to_hex(x.k);
    return out;
}

inline VerbOutput equidist(const RunConfig& cfg) {
    VerbOutput out;
    const IntervalMap f = parse_map(cfg.map_spec, cfg.q, RngKey{cfg.seed, detail::kStreamMap});
    const UnitPoint alpha =
        detail::resolve_point(cfg.alpha_str, cfg.q, cfg.seed, detail::kStreamAlpha, true);
    const UnitPoint x = detail::resolve_point(cfg.x_str, cfg.q, cfg.seed, detail::kStreamX, false);
    const UnitPoint y = detail::resolve_point(cfg.y_str, cfg.q, cfg.seed, detail::kStreamY, false);
    const auto profile = equidistribution_check(f, alpha, x, y, cfg.n_horizon);
    CsvWriter csv({"n", "star_discrepancy_sup", "method"});
    PlotSeries s;
    s.name = "D*";
    for (const auto& p : profile) {
        csv.row({std::to_string(p.n), fmt_float(p.dstar), "exhaustive_grid"});
        s.points.emplace_back(std::log10(static_cast<double>(p.n)), p.dstar);
    }
    out.files.emplace_back("equidist.csv", csv.str());
    out.files.emplace_back("equidist.svg",
                           svg_line_plot("product equidistribution", "log10 n", "D*", {s}));
    out.summary["first"] = profile.front().dstar;
    out.summary["last"] = profile.back().dstar;
    out.gates.push_back({"discrepancy_decreasing", profile.back().dstar < profile.front().dstar,
                         fmt_float(profile.front().dstar) + " -> " + fmt_float(profile.back().dstar)});
    out.realized["map"] = detail::realized_map_json(f);
    out.realized["alpha_hex"] = to_hex(alpha.k);
    return out;
}

}  // namespace verbs

inline VerbOutput execute_verb(const RunConfig& cfg) {
    if (cfg.verb == "measure-vn") return verbs::measure_vn(cfg);
    if (cfg.verb == "measure-pair") return verbs::measure_pair(cfg);
    if (cfg.verb == "union-bound") return verbs::union_bound(cfg);
    if (cfg.verb == "interval-lemma") return verbs::interval_lemma(cfg);
    if (cfg.verb == "limsup" || cfg.verb == "kurzweil" || cfg.verb == "fixed-center")
        return verbs::tail_family(cfg);
    if (cfg.verb == "marchese") return verbs::marchese(cfg);
    if (cfg.verb == "loglaw") return verbs::loglaw(cfg);
    if (cfg.verb == "alpha-survey") return verbs::alpha_survey_verb(cfg);
    if (cfg.verb == "equidist") return verbs::equidist(cfg);
    throw std::invalid_argument("unknown verb: " + cfg.verb);
}

// Executes the verb and writes artifacts; the manifest lands last, by rename.
inline RunResult run_config(const RunConfig& cfg, bool force) {
    namespace fs = std::filesystem;
    RunResult result;
    result.out_dir = cfg.out_dir;
    const fs::path dir(cfg.out_dir);
    std::error_code ec;
    if (fs::exists(dir) && !fs::is_empty(dir, ec) && !force) {
        result.exit_code = 1;
        result.message = "output directory not empty (pass --force to overwrite): " + cfg.out_dir;
        return result;
    }
    fs::create_directories(dir);

    const auto t0 = std::chrono::steady_clock::now();
    VerbOutput out = execute_verb(cfg);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ordered_json summary;
    summary["verb"] = cfg.verb;
    summary["config_hash"] = cfg.config_hash;
    summary["config"] = detail::config_echo(cfg);
    summary["realized"] = out.realized;
    for (auto& [k, v] : out.summary.items()) summary[k] = v;
    ordered_json gates = ordered_json::array();
    for (const auto& g : out.gates) {
        ordered_json gj;
        gj["name"] = g.name;
        gj["passed"] = g.passed;
        gj["detail"] = g.detail;
        gates.push_back(gj);
    }
    summary["gates"] = gates;
    out.files.emplace_back("summary.json", summary.dump(2) + "\n");

    for (const auto& [name, bytes] : out.files) write_file((dir / name).string(), bytes);

    ordered_json manifest;
    manifest["config_hash"] = cfg.config_hash;
    manifest["tool_version"] = "0.1.0";
    manifest["verb"] = cfg.verb;
    manifest["realized"] = out.realized;
    manifest["gates"] = gates;
    manifest["wall_clock_sec"] = wall;
    ordered_json files = ordered_json::array();
    for (const auto& [name, bytes] : out.files) {
        ordered_json fj;
        fj["name"] = name;
        fj["bytes"] = bytes.size();
        fj["sha256"] = sha256_hex(bytes);
        files.push_back(fj);
    }
    manifest["files"] = files;
    const fs::path tmp = dir / "manifest.json.tmp";
    write_file(tmp.string(), manifest.dump(2) + "\n");
    fs::rename(tmp, dir / "manifest.json");

    result.gates = out.gates;
    const std::string failed = detail::gate_flag(out.gates);
    if (!failed.empty()) {
        result.exit_code = 2;
        result.message = "gate failed: " + failed;
    }
    return result;
}

}  // namespace stp
