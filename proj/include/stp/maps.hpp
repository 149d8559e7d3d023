#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stp/fixedpoint.hpp"
#include "stp/rng.hpp"

// Measure-preserving transformations of the quantized circle: rotations,
// interval exchange transformations, and odd-multiplier expanding maps.
// Every variant is an exact bijection of Z_{2^q}; orbits never accumulate error.

namespace stp {

// Images pi(1..d) of {1..d}, stored 1-based in `images[i-1]`.
struct Permutation {
    std::vector<u32> images;

    explicit Permutation(std::vector<u32> imgs) : images(std::move(imgs)) {
        const std::size_t d = images.size();
        if (d < 2) throw std::invalid_argument("permutation needs d >= 2");
        std::vector<bool> seen(d, false);
        for (u32 v : images) {
            if (v < 1 || v > d || seen[v - 1])
                throw std::invalid_argument("not a bijection on {1..d}");
            seen[v - 1] = true;
        }
    }

    std::size_t degree() const { return images.size(); }

    // pi({1..t}) != {1..t} for every t < d, i.e. the running max exceeds t.
    bool irreducible() const {
        u32 running_max = 0;
        for (std::size_t t = 1; t < images.size(); ++t) {
            running_max = std::max(running_max, images[t - 1]);
            if (running_max <= t) return false;
        }
        return true;
    }

    Permutation inverse() const {
        std::vector<u32> inv(images.size());
        for (std::size_t i = 0; i < images.size(); ++i) inv[images[i] - 1] = static_cast<u32>(i + 1);
        return Permutation(std::move(inv));
    }

    bool identity() const {
        for (std::size_t i = 0; i < images.size(); ++i)
            if (images[i] != i + 1) return false;
        return true;
    }
};

inline Permutation random_permutation(std::size_t d, SequentialRng& rng) {
    std::vector<u32> imgs(d);
    for (std::size_t i = 0; i < d; ++i) imgs[i] = static_cast<u32>(i + 1);
    for (std::size_t i = d - 1; i > 0; --i)
        std::swap(imgs[i], imgs[rng.next_below(i + 1)]);
    return Permutation(std::move(imgs));
}

inline Permutation random_irreducible_permutation(std::size_t d, SequentialRng& rng) {
    for (;;) {
        Permutation p = random_permutation(d, rng);
        if (p.irreducible()) return p;
    }
}

// Exchange of d subintervals with integer lengths summing to exactly 2^q.
class Iet {
  public:
    Iet(std::vector<u128> lengths, Permutation perm, int q)
        : q_(q), lengths_(std::move(lengths)), perm_(std::move(perm)) {
        check_grid_bits(q);
        const std::size_t d = lengths_.size();
        if (d != perm_.degree()) throw std::invalid_argument("lengths/permutation size mismatch");
        u128 sum = 0;
        bool has_zero = false;
        for (u128 p : lengths_) {
            sum += p;  // wraps mod 2^128, checked against the masked total below
            has_zero |= (p == 0);
        }
        const u128 mask = grid_mask(q_);
        if ((sum & mask) != 0 || (q_ < 128 && sum != grid_size(q_)) || (q_ == 128 && sum != 0))
            throw std::invalid_argument("interval lengths must sum to exactly 2^q");
        if (has_zero && q_ == 128)
            throw std::invalid_argument("zero-length intervals unsupported at q=128");

        src_left_.resize(d);
        cuts_.reserve(d - 1);
        u128 acc = 0;
        for (std::size_t j = 0; j < d; ++j) {
            src_left_[j] = acc;
            if (j > 0) cuts_.push_back(acc);
            acc += lengths_[j];
        }
        // Image-slot order = sources sorted by pi; prefix sums give image left endpoints.
        dest_left_.resize(d);
        std::vector<u32> order(d);
        for (std::size_t j = 0; j < d; ++j) order[perm_.images[j] - 1] = static_cast<u32>(j);
        acc = 0;
        for (std::size_t s = 0; s < d; ++s) {
            dest_left_[order[s]] = acc;
            acc += lengths_[order[s]];
        }
    }

    int grid_bits() const { return q_; }
    std::size_t degree() const { return lengths_.size(); }
    const std::vector<u128>& lengths() const { return lengths_; }
    const Permutation& permutation() const { return perm_; }

    std::size_t interval_index(u128 x) const {
        return static_cast<std::size_t>(
            std::upper_bound(cuts_.begin(), cuts_.end(), x) - cuts_.begin());
    }

    u128 apply_raw(u128 x) const {
        const std::size_t j = interval_index(x);
        return (x - src_left_[j] + dest_left_[j]) & grid_mask(q_);
    }

    Iet inverse() const {
        const Permutation inv = perm_.inverse();
        std::vector<u128> lens(degree());
        for (std::size_t i = 0; i < degree(); ++i) lens[i] = lengths_[inv.images[i] - 1];
        return Iet(std::move(lens), inv, q_);
    }

    // Interior breakpoints p_1+...+p_j, deduplicated (zero lengths collapse).
    std::vector<u128> interior_cuts() const {
        std::vector<u128> out;
        for (u128 c : cuts_)
            if (c != 0 && (q_ == 128 || c < grid_size(q_)) && (out.empty() || out.back() != c))
                out.push_back(c);
        return out;
    }

  private:
    int q_;
    std::vector<u128> lengths_;
    Permutation perm_;
    std::vector<u128> src_left_;
    std::vector<u128> dest_left_;
    std::vector<u128> cuts_;
};

struct Rotation {
    UnitPoint alpha;
};

// x -> m*x mod 1 with m odd: the real map is m-to-1, but on the grid odd m is a
// bijection mod 2^q. Even m collapses the grid (one bit per step) and is rejected.
struct TimesOdd {
    u64 multiplier;
    int q;

    TimesOdd(u64 m, int q_) : multiplier(m), q(q_) {
        check_grid_bits(q_);
        if (m < 3 || m % 2 == 0) throw std::invalid_argument("multiplier must be odd and >= 3");
    }
};

inline u128 rotation_apply_raw(u128 alpha, u128 x, int q) {
    return (x + alpha) & grid_mask(q);
}

inline UnitPoint rotation_apply(UnitPoint alpha, UnitPoint x) {
    check_same_grid(alpha, x);
    return UnitPoint(rotation_apply_raw(alpha.k, x.k, x.q), x.q);
}

inline u128 times_odd_apply_raw(u64 m, u128 x, int q) {
    return (x * m) & grid_mask(q);
}

inline u128 pow_mod_grid(u128 base, u64 e, int q) {
    const u128 mask = grid_mask(q);
    u128 acc = 1, b = base & mask;
    while (e != 0) {
        if (e & 1) acc = (acc * b) & mask;
        b = (b * b) & mask;
        e >>= 1;
    }
    return acc;
}

class IntervalMap {
  public:
    enum class Kind { rotation, iet, times_odd };

    explicit IntervalMap(Rotation r) : q_(r.alpha.q), v_(r) {}
    explicit IntervalMap(Iet t) : q_(t.grid_bits()), v_(std::move(t)) {}
    explicit IntervalMap(TimesOdd t) : q_(t.q), v_(t) {}

    int grid_bits() const { return q_; }
    int q() const { return q_; }

    Kind kind() const {
        if (std::holds_alternative<Rotation>(v_)) return Kind::rotation;
        if (std::holds_alternative<Iet>(v_)) return Kind::iet;
        return Kind::times_odd;
    }

    // Checked casts; call kind() first.
    const Rotation& as_rotation() const { return std::get<Rotation>(v_); }
    const Iet& as_iet() const { return std::get<Iet>(v_); }
    const TimesOdd& as_times_odd() const { return std::get<TimesOdd>(v_); }

    // True when the underlying real map (not just its grid restriction) is invertible.
    bool real_map_invertible() const { return kind() != Kind::times_odd; }

    u128 apply_raw(u128 x) const {
        if (const Rotation* r = std::get_if<Rotation>(&v_)) return rotation_apply_raw(r->alpha.k, x, q_);
        if (const Iet* t = std::get_if<Iet>(&v_)) return t->apply_raw(x);
        return times_odd_apply_raw(std::get<TimesOdd>(v_).multiplier, x, q_);
    }

    UnitPoint apply(UnitPoint x) const {
        if (static_cast<int>(x.q) != q_) throw std::invalid_argument("point grid mismatch");
        return UnitPoint(apply_raw(x.k), q_);
    }

    // n-fold composition; O(1) for rotation (x + n*alpha) and times-odd (m^n * x),
    // sequential for IETs.
    u128 iterate_raw(u128 x, u64 n) const {
        if (const Rotation* r = std::get_if<Rotation>(&v_))
            return (x + u128{n} * r->alpha.k) & grid_mask(q_);
        if (const TimesOdd* t = std::get_if<TimesOdd>(&v_))
            return (x * pow_mod_grid(t->multiplier, n, q_)) & grid_mask(q_);
        const Iet& t = std::get<Iet>(v_);
        u128 cur = x;
        for (u64 i = 0; i < n; ++i) cur = t.apply_raw(cur);
        return cur;
    }

    UnitPoint iterate(UnitPoint x, u64 n) const {
        if (static_cast<int>(x.q) != q_) throw std::invalid_argument("point grid mismatch");
        return UnitPoint(iterate_raw(x.k, n), q_);
    }

    IntervalMap inverse() const {
        if (const Rotation* r = std::get_if<Rotation>(&v_))
            return IntervalMap(Rotation{UnitPoint((u128{0} - r->alpha.k) & grid_mask(q_), q_)});
        if (const Iet* t = std::get_if<Iet>(&v_)) return IntervalMap(t->inverse());
        throw std::logic_error("times-odd real map is m-to-1; no inverse exposed");
    }

    // Sorted interior breakpoints of the real map.
    std::vector<UnitPoint> discontinuities() const {
        std::vector<u128> raw;
        if (const Rotation* r = std::get_if<Rotation>(&v_)) {
            if (r->alpha.k != 0) raw.push_back((u128{0} - r->alpha.k) & grid_mask(q_));
        } else if (const Iet* t = std::get_if<Iet>(&v_)) {
            raw = t->interior_cuts();
        } else {
            const u64 m = std::get<TimesOdd>(v_).multiplier;
            for (u64 j = 1; j < m; ++j) raw.push_back(quantize_fraction(j, m, q_).value);
        }
        std::sort(raw.begin(), raw.end());
        std::vector<UnitPoint> out;
        out.reserve(raw.size());
        for (u128 k : raw) out.emplace_back(k, q_);
        return out;
    }

  private:
    int q_;
    std::variant<Rotation, Iet, TimesOdd> v_;
};

// Lazy orbit f^0 x, f^1 x, ...
class OrbitStream {
  public:
    OrbitStream(const IntervalMap& f, UnitPoint x) : f_(f), cur_(x.k) {
        if (static_cast<int>(x.q) != f.grid_bits())
            throw std::invalid_argument("point grid mismatch");
    }

    UnitPoint next() {
        const u128 out = cur_;
        cur_ = f_.apply_raw(cur_);
        return UnitPoint(out, f_.grid_bits());
    }

  private:
    const IntervalMap& f_;
    u128 cur_;
};

// Lengths Lebesgue-uniform on the simplex (sorted uniform cuts of the grid,
// the quantized Dirichlet(1,..,1) law); integer lengths sum to 2^q by
// construction. Draws with empty intervals are redrawn.
inline Iet random_iet(std::size_t d, const Permutation& perm, SequentialRng& rng, int q) {
    if (d < 2) throw std::invalid_argument("random_iet: d must be >= 2");
    if (perm.degree() != d) throw std::invalid_argument("random_iet: permutation degree mismatch");
    for (;;) {
        std::vector<u128> cuts(d - 1);
        for (auto& c : cuts) c = rng.next_point(q).k;
        std::sort(cuts.begin(), cuts.end());
        std::vector<u128> lens(d);
        bool ok = true;
        u128 prev = 0;
        for (std::size_t j = 0; j + 1 < d; ++j) {
            lens[j] = cuts[j] - prev;
            ok &= lens[j] != 0;
            prev = cuts[j];
        }
        lens[d - 1] = (u128{0} - prev) & grid_mask(q);
        if (q < 128) lens[d - 1] = grid_size(q) - prev;
        ok &= lens[d - 1] != 0;
        if (ok) return Iet(std::move(lens), perm, q);
    }
}

// Alpha for experiment rotations: quantize then force the low bit, so the grid
// period is the full 2^q and periodicity sits far beyond any horizon.
inline UnitPoint rotation_alpha_from_real(double x, int q) {
    UnitPoint a = quantize(x, q);
    a.k |= 1;
    return a;
}

inline UnitPoint odd_uniform_alpha(RngKey key, u64 index, int q, u64 slot_base = 0) {
    UnitPoint a = sample_uniform(key, index, q, slot_base);
    a.k |= 1;
    return a;
}

// Real-valued lengths to integer grid lengths summing to exactly 2^q,
// largest-remainder correction, ties to the lower index.
inline std::vector<u128> quantize_lengths(const std::vector<double>& vals, int q) {
    check_grid_bits(q);
    const std::size_t d = vals.size();
    double total = 0;
    for (double v : vals) {
        if (!(v > 0.0) || v >= 1.0)
            throw std::invalid_argument("interval lengths must lie in (0,1)");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("interval lengths must sum to 1");
    std::vector<u128> base(d);
    std::vector<double> frac(d);
    u128 used = 0;
    for (std::size_t i = 0; i < d; ++i) {
        base[i] = quantize(vals[i], q).k;
        frac[i] = vals[i] * std::exp2(static_cast<double>(q)) - static_cast<double>(base[i]);
        used += base[i];
    }
    // Signed shortfall; wraps cancel since its true magnitude is far below 2^127.
    using i128 = __int128;
    i128 diff = static_cast<i128>(((q < 128 ? grid_size(q) : u128{0}) - used) & ~u128{0});
    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    const i128 per = diff / static_cast<i128>(d);
    const i128 rem = diff - per * static_cast<i128>(d);  // sign of diff, |rem| < d
    for (std::size_t i = 0; i < d; ++i) {
        i128 adj = per;
        if (rem > 0 && static_cast<i128>(i) < rem) adj += 1;                        // largest fracs up
        if (rem < 0 && static_cast<i128>(d - 1 - i) < -rem) adj -= 1;               // smallest fracs down
        const i128 nv = static_cast<i128>(base[order[i]]) + adj;
        if (nv <= 0) throw std::invalid_argument("length rounding produced an empty interval");
        base[order[i]] = static_cast<u128>(nv);
    }
    return base;
}

namespace detail {
inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline double parse_real01(const std::string& s) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    if (pos != s.size()) throw std::invalid_argument("trailing junk in number: '" + s + "'");
    return v;
}
}  // namespace detail

// Map grammar: rot:<alpha> | iet:<d>:<perm>:<lengths|random:<subseed>> | times:<m>.
// Rotation alphas are forced odd; realized parameters are echoed in run manifests.
inline IntervalMap parse_map(const std::string& spec, int q, RngKey key) {
    const auto parts = detail::split(spec, ':');
    if (parts.empty()) throw std::invalid_argument("empty map spec");
    const std::string& tag = parts[0];
    if (tag == "rot") {
        if (parts.size() != 2) throw std::invalid_argument("rot:<alpha> expects one field");
        const double a = detail::parse_real01(parts[1]);
        if (!(a >= 0.0) || a >= 1.0) throw std::invalid_argument("rotation alpha outside [0,1)");
        return IntervalMap(Rotation{rotation_alpha_from_real(a, q)});
    }
    if (tag == "times") {
        if (parts.size() != 2) throw std::invalid_argument("times:<m> expects one field");
        u64 m = 0;
        try {
            m = std::stoull(parts[1]);
        } catch (const std::exception&) {
            throw std::invalid_argument("bad multiplier: '" + parts[1] + "'");
        }
        if (m % 2 == 0)
            throw std::invalid_argument("even multiplier " + parts[1] +
                                        " collapses the grid; use odd m >= 3");
        return IntervalMap(TimesOdd(m, q));
    }
    if (tag == "iet") {
        if (parts.size() < 4) throw std::invalid_argument("iet:<d>:<perm>:<lengths|random:seed>");
        const std::size_t d = std::stoul(parts[1]);
        if (d < 2) throw std::invalid_argument("iet needs d >= 2");
        const auto perm_fields = detail::split(parts[2], ',');
        if (perm_fields.size() != d) throw std::invalid_argument("permutation size != d");
        std::vector<u32> imgs;
        for (const auto& f : perm_fields) imgs.push_back(static_cast<u32>(std::stoul(f)));
        Permutation perm(std::move(imgs));
        if (parts[3] == "random") {
            if (parts.size() != 5) throw std::invalid_argument("iet random form needs a subseed");
            SequentialRng rng(RngKey{key.seed, key.stream ^ 0x1e7aULL}, std::stoull(parts[4]));
            return IntervalMap(random_iet(d, perm, rng, q));
        }
        if (parts.size() != 4) throw std::invalid_argument("unexpected fields after lengths");
        const auto len_fields = detail::split(parts[3], ',');
        if (len_fields.size() != d) throw std::invalid_argument("length count != d");
        std::vector<double> vals;
        for (const auto& f : len_fields) vals.push_back(detail::parse_real01(f));
        return IntervalMap(Iet(quantize_lengths(vals, q), perm, q));
    }
    throw std::invalid_argument("unknown map family: '" + tag + "'");
}

}  // namespace stp
