#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stp/fixedpoint.hpp"
#include "stp/maps.hpp"

// Target-radius sequences b_1 >= b_2 >= ... > 0 and the derived b' sequence:
// blocks of indices over which sum(b_n) >= k define c_n = b_n/k, and
// b'_n = min(1/(16n), c_n). Rational generators evaluate exactly; block
// boundaries come from truncated 2^-128 fixed-point sums, so a block is never
// declared complete before its true sum reaches the threshold.

namespace stp {

// Exact decimal-string rational: "0.25" -> 1/4.
struct Rational64 {
    u64 num{0};
    u64 den{1};
};

inline u64 gcd_u64(u64 a, u64 b) {
    while (b != 0) {
        const u64 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

inline Rational64 parse_decimal_rational(const std::string& s) {
    if (s.empty()) throw std::invalid_argument("empty number");
    u64 num = 0, den = 1;
    bool seen_digit = false, seen_dot = false;
    for (char ch : s) {
        if (ch == '.') {
            if (seen_dot) throw std::invalid_argument("two dots in '" + s + "'");
            seen_dot = true;
            continue;
        }
        if (ch < '0' || ch > '9') throw std::invalid_argument("bad digit in '" + s + "'");
        seen_digit = true;
        if (num > (~u64{0} - 9) / 10 || (seen_dot && den > ~u64{0} / 10))
            throw std::invalid_argument("number too long: '" + s + "'");
        num = num * 10 + static_cast<u64>(ch - '0');
        if (seen_dot) den *= 10;
    }
    if (!seen_digit) throw std::invalid_argument("no digits in '" + s + "'");
    const u64 g = gcd_u64(num == 0 ? den : num, den);
    return {num / g, den / g};
}

// Nonnegative reals as whole + frac/2^128; adds truncate, so the stored value
// is a lower bound within n_terms * 2^-128 of the true sum.
class FixedAccum {
  public:
    void add_fraction(u128 num, u128 den) {
        if (den == 0) throw std::domain_error("zero denominator");
        whole_ += static_cast<u64>(num / den);
        add_frac_bits(quantize_fraction(num % den, den, 128).value);
    }

    void add_double(double x) {
        if (!(x >= 0)) throw std::domain_error("negative term");
        const double w = std::floor(x);
        whole_ += static_cast<u64>(w);
        const double f = x - w;
        if (f > 0) {
            // 2^-128-scaled fraction via two 64-bit halves.
            const double hi = std::floor(std::ldexp(f, 64));
            const double lo = std::floor(std::ldexp(f - std::ldexp(hi, -64), 128));
            add_frac_bits((u128{static_cast<u64>(hi)} << 64) + static_cast<u128>(lo));
        }
    }

    // One unit in the last (2^-128) place; turns a truncating accumulator
    // into the matching upper bound, one call per inexact term.
    void add_ulp() { add_frac_bits(1); }

    u64 whole() const { return whole_; }
    u128 frac_bits() const { return frac_; }
    double value() const { return static_cast<double>(whole_) + std::ldexp(static_cast<double>(frac_ >> 64), -64); }
    bool at_least(u64 k) const { return whole_ >= k; }

  private:
    void add_frac_bits(u128 bits) {
        const u128 before = frac_;
        frac_ += bits;
        if (frac_ < before) whole_ += 1;  // carry
    }

    u64 whole_{0};
    u128 frac_{0};
};

class TargetSequence {
  public:
    enum class Kind { harmonic, log_harmonic, constant, explicit_list };

    static TargetSequence harmonic(Rational64 c) { return TargetSequence(Kind::harmonic, c); }
    static TargetSequence log_harmonic(Rational64 c) { return TargetSequence(Kind::log_harmonic, c); }
    static TargetSequence constant(Rational64 c) { return TargetSequence(Kind::constant, c); }

    static TargetSequence explicit_list(std::vector<Rational64> terms) {
        TargetSequence s(Kind::explicit_list, Rational64{1, 1});
        s.terms_ = std::move(terms);
        return s;
    }

    static TargetSequence from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("cannot open sequence file: " + path);
        std::vector<Rational64> terms;
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (line.empty()) continue;
            terms.push_back(parse_decimal_rational(line));
        }
        if (terms.empty()) throw std::invalid_argument("sequence file is empty: " + path);
        return explicit_list(std::move(terms));
    }

    Kind kind() const { return kind_; }

    // Explicit lists bound the horizon; generators are unbounded.
    u64 max_index() const {
        return kind_ == Kind::explicit_list ? static_cast<u64>(terms_.size())
                                            : std::numeric_limits<u64>::max();
    }

    bool rational() const { return kind_ != Kind::log_harmonic; }

    // b_i as an exact fraction (rational kinds only); not reduced.
    std::pair<u128, u128> fraction(u64 i) const {
        check_index(i);
        switch (kind_) {
            case Kind::harmonic: return {c_.num, u128{c_.den} * i};
            case Kind::constant: return {c_.num, c_.den};
            case Kind::explicit_list: return {terms_[i - 1].num, terms_[i - 1].den};
            default: throw std::logic_error("irrational generator has no exact fraction");
        }
    }

    double value(u64 i) const {
        check_index(i);
        if (kind_ == Kind::log_harmonic)
            return static_cast<double>(c_.num) / static_cast<double>(c_.den) /
                   (static_cast<double>(i) * std::log(static_cast<double>(i) + 1.0));
        const auto [n, d] = fraction(i);
        return static_cast<double>(n) / static_cast<double>(d);
    }

    // floor(b_i * 2^q), clamped to the half-circle when b_i >= 1/2.
    Radius radius(u64 i, int q) const {
        const u128 half = u128{1} << (q - 1);
        if (rational()) {
            const auto [n, d] = fraction(i);
            if (2 * n >= d) return Radius(half, q);
            return Radius(quantize_fraction(n, d, q).value, q);
        }
        const double x = value(i);
        if (x >= 0.5) return Radius(half, q);
        return Radius(quantize(x, q).k, q);
    }

    void accumulate(FixedAccum& acc, u64 i) const {
        if (rational()) {
            const auto [n, d] = fraction(i);
            acc.add_fraction(n, d);
        } else {
            acc.add_double(value(i));
        }
    }

    std::string describe() const {
        const std::string c = std::to_string(c_.num) + "/" + std::to_string(c_.den);
        switch (kind_) {
            case Kind::harmonic: return "harmonic:" + c;
            case Kind::log_harmonic: return "logharmonic:" + c;
            case Kind::constant: return "const:" + c;
            default: return "explicit[" + std::to_string(terms_.size()) + "]";
        }
    }

  private:
    TargetSequence(Kind k, Rational64 c) : kind_(k), c_(c) {
        if (k != Kind::explicit_list && c.num == 0)
            throw std::invalid_argument("sequence scale c must be positive");
    }

    void check_index(u64 i) const {
        if (i == 0) throw std::domain_error("sequence index starts at 1");
        if (i > max_index()) throw std::out_of_range("index beyond explicit sequence length");
    }

    Kind kind_;
    Rational64 c_;
    std::vector<Rational64> terms_;
};

struct AdmissibilityReport {
    bool admissible{true};
    u64 first_violation{0};   // 0 = none; else index i where b_i <= 0 or b_i > b_{i-1}
    std::string reason;
    double prefix_sum{0};      // S_N
    double half_prefix_sum{0}; // S_{N/2}
    bool divergence_suspect{false};  // growth of the second half below 1% of S_N
};

// Positivity and monotone non-increase over [1, N]; the divergence flag is a
// heuristic only (a prefix cannot decide divergence). Generators are monotone
// by construction, so entry checks run only for explicit lists.
inline AdmissibilityReport check_admissible(const TargetSequence& b, u64 N) {
    if (N < 1) throw std::invalid_argument("horizon must be >= 1");
    if (N > b.max_index()) throw std::out_of_range("horizon beyond explicit sequence length");
    AdmissibilityReport rep;
    long double sum = 0, comp = 0;
    const u64 half = N / 2;
    const bool check_entries = b.kind() == TargetSequence::Kind::explicit_list;
    std::pair<u128, u128> prev{0, 1};
    for (u64 i = 1; i <= N; ++i) {
        if (check_entries) {
            const auto cur = b.fraction(i);  // entries < 2^60 each, products fit u128
            if (cur.first == 0) {
                rep.reason = "non-positive entry";
            } else if (i > 1 && cur.first * prev.second > prev.first * cur.second) {
                rep.reason = "increasing entry";
            }
            prev = cur;
            if (!rep.reason.empty()) {
                rep.admissible = false;
                rep.first_violation = i;
                return rep;
            }
        }
        // Neumaier compensated sum.
        const long double x = static_cast<long double>(b.value(i));
        const long double t = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
        if (i == half) rep.half_prefix_sum = static_cast<double>(sum + comp);
    }
    rep.prefix_sum = static_cast<double>(sum + comp);
    if (N >= 4 && rep.prefix_sum - rep.half_prefix_sum < 0.01 * rep.prefix_sum)
        rep.divergence_suspect = true;
    return rep;
}

// Compensated partial sum of b_i over [from, to]; empty when to < from.
inline double prefix_sum(const TargetSequence& b, u64 from, u64 to) {
    if (from < 1) throw std::invalid_argument("summation starts at index 1");
    long double sum = 0, comp = 0;
    for (u64 i = from; i <= to; ++i) {
        const long double x = static_cast<long double>(b.value(i));
        const long double t = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    return static_cast<double>(sum + comp);
}

// The b' construction: greedy blocks with sum(b_n) >= k, c_n = b_n/k inside
// block k, b'_n = min(1/(16n), c_n). Quantized radii step one grid unit down
// when the 1/(16n) envelope is met exactly, keeping the strict inequality.
class DerivedSequence {
  public:
    DerivedSequence(TargetSequence base, u64 horizon) : base_(std::move(base)), horizon_(horizon) {
        if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
        if (horizon > base_.max_index())
            throw std::out_of_range("horizon beyond explicit sequence length");
        const AdmissibilityReport rep = check_admissible(base_, horizon);
        if (!rep.admissible)
            throw std::invalid_argument("base sequence inadmissible at index " +
                                        std::to_string(rep.first_violation) + ": " + rep.reason);
        u64 k = 2;
        FixedAccum acc;
        for (u64 n = 1; n <= horizon_; ++n) {
            base_.accumulate(acc, n);
            if (acc.at_least(k)) {
                block_ends_.push_back(n);
                k += 1;
                acc = FixedAccum{};
            }
        }
        incomplete_final_block_ = block_ends_.empty() || block_ends_.back() != horizon_;
    }

    const TargetSequence& base() const { return base_; }
    u64 horizon() const { return horizon_; }
    bool incomplete_final_block() const { return incomplete_final_block_; }
    const std::vector<u64>& block_ends() const { return block_ends_; }

    // Block number k(n) >= 2; the final (possibly incomplete) block extends to the horizon.
    u64 block_of(u64 n) const {
        check_index(n);
        u64 lo = 0, hi = block_ends_.size();
        while (lo < hi) {  // count of block ends < n
            const u64 mid = (lo + hi) / 2;
            if (block_ends_[mid] < n) lo = mid + 1;
            else hi = mid;
        }
        return 2 + lo;
    }

    // c_n = b_n / k(n) as an exact fraction (rational bases).
    std::pair<u128, u128> c_fraction(u64 n) const {
        const auto [num, den] = base_.fraction(n);
        return {num, den * block_of(n)};
    }

    double value(u64 n) const {
        check_index(n);
        const double env = 1.0 / (16.0 * static_cast<double>(n));
        if (base_.rational()) {
            const auto [cn, cd] = c_fraction(n);
            // min(1/(16n), cn/cd) exactly
            if (u128{16} * n * cn < cd) return static_cast<double>(cn) / static_cast<double>(cd);
            return env;
        }
        return std::min(env, base_.value(n) / static_cast<double>(block_of(n)));
    }

    Radius radius(u64 n, int q) const {
        check_index(n);
        const QuantizedFraction env = quantize_fraction(1, u128{16} * n, q);
        u128 r = env.value;
        if (base_.rational()) {
            const auto [cn, cd] = c_fraction(n);
            if (cn < cd) {
                const u128 rc = quantize_fraction(cn, cd, q).value;
                r = std::min(r, rc);
            }  // c_n >= 1 leaves the envelope in charge
        } else {
            const double c = base_.value(n) / static_cast<double>(block_of(n));
            if (c < 1.0) r = std::min(r, quantize(c, q).k);
        }
        if (env.exact && r == env.value && r > 0) r -= 1;  // restore b'_n < 1/(16n) on the grid
        return Radius(r, q);
    }

  private:
    void check_index(u64 n) const {
        if (n == 0 || n > horizon_) throw std::out_of_range("index outside derived horizon");
    }

    TargetSequence base_;
    u64 horizon_;
    std::vector<u64> block_ends_;
    bool incomplete_final_block_{false};
};

inline DerivedSequence derive_bprime(const TargetSequence& b, u64 horizon) {
    return DerivedSequence(b, horizon);
}

// Sequence grammar: harmonic:<c> | logharmonic:<c> | const:<c> | file:<path>,
// optionally wrapped as bprime(<base>). The wrapper is resolved by the caller
// because the derivation needs an explicit horizon.
struct SequenceSpec {
    TargetSequence base;
    bool bprime{false};
};

inline SequenceSpec parse_sequence(const std::string& spec) {
    std::string body = spec;
    bool bp = false;
    if (body.rfind("bprime(", 0) == 0) {
        if (body.empty() || body.back() != ')')
            throw std::invalid_argument("unbalanced bprime(...) in '" + spec + "'");
        body = body.substr(7, body.size() - 8);
        bp = true;
    }
    const auto colon = body.find(':');
    if (colon == std::string::npos)
        throw std::invalid_argument("sequence spec needs <kind>:<arg>, got '" + spec + "'");
    const std::string tag = body.substr(0, colon);
    const std::string arg = body.substr(colon + 1);
    if (tag == "harmonic") return {TargetSequence::harmonic(parse_decimal_rational(arg)), bp};
    if (tag == "logharmonic") return {TargetSequence::log_harmonic(parse_decimal_rational(arg)), bp};
    if (tag == "const") {
        const Rational64 c = parse_decimal_rational(arg);
        if (c.num == 0) throw std::invalid_argument("const sequence must be positive");
        return {TargetSequence::constant(c), bp};
    }
    if (tag == "file") return {TargetSequence::from_file(arg), bp};
    throw std::invalid_argument("unknown sequence kind: '" + tag + "'");
}

}  // namespace stp
