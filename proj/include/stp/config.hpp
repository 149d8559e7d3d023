#pragma once

#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stp/hash.hpp"
#include "stp/maps.hpp"
#include "stp/sequences.hpp"

// Run configuration: a flat key-value text document, validated against the
// full schema with every error reported (not just the first). The canonical
// serialization hashes the complete effective config minus the two
// environment-overridable keys (out, workers), so the hash identifies the
// scientific content of a run.

namespace stp {

struct ConfigError {
    int line{0};
    std::string message;
};

struct RunConfig {
    std::string verb;
    std::string map_spec{"rot:0.25"};
    std::string seq_spec{"bprime(harmonic:1)"};
    int q{64};
    u64 n_horizon{1000};
    u64 samples{100000};
    u64 y_samples{1000};
    u64 alpha_samples{100};
    u64 draws{10};
    u64 instances{1000};
    u64 seed{1};
    std::vector<u64> tails;  // empty -> default grid
    std::string out_dir{"out"};
    u64 t{1};
    u64 n0{1};
    std::vector<u64> n_list{1, 3, 10, 50};
    std::vector<std::pair<u64, u64>> pairs{{1, 2}, {2, 5}, {3, 17}};
    double theta{0.5};
    int e_min{5};
    int e_max{14};
    u64 n_max{10000000};
    u64 cells{65536};
    u64 k_div{128};
    std::string alpha_str{"random"};
    std::string x_str{"random"};
    std::string y_str{"random"};
    std::string center_str{"0.5"};
    std::string method{"mc"};
    std::optional<double> gate_tail;
    u64 workers{1};

    std::string canonical_text;
    std::string config_hash;
};

namespace detail {

inline std::string trim(std::string s) {
    const auto notspace = [](char c) { return c != ' ' && c != '\t' && c != '\r'; };
    while (!s.empty() && !notspace(s.front())) s.erase(s.begin());
    while (!s.empty() && !notspace(s.back())) s.pop_back();
    return s;
}

inline bool parse_u64_value(const std::string& s, u64& out) {
    if (s.empty()) return false;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

inline bool parse_double_value(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_u64_list(const std::string& s, std::vector<u64>& out) {
    out.clear();
    size_t start = 0;
    while (start <= s.size()) {
        const size_t comma = s.find(',', start);
        const std::string tok = trim(s.substr(start, comma == std::string::npos ? std::string::npos
                                                                                : comma - start));
        u64 v = 0;
        if (!parse_u64_value(tok, v)) return false;
        out.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return !out.empty();
}

inline bool parse_pair_list(const std::string& s, std::vector<std::pair<u64, u64>>& out) {
    out.clear();
    size_t start = 0;
    while (start <= s.size()) {
        const size_t comma = s.find(',', start);
        const std::string tok = trim(s.substr(start, comma == std::string::npos ? std::string::npos
                                                                                : comma - start));
        const size_t dash = tok.find('-');
        if (dash == std::string::npos) return false;
        u64 a = 0, b = 0;
        if (!parse_u64_value(trim(tok.substr(0, dash)), a) ||
            !parse_u64_value(trim(tok.substr(dash + 1)), b))
            return false;
        out.emplace_back(a, b);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return !out.empty();
}

inline std::string join_u64(const std::vector<u64>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::string join_pairs(const std::vector<std::pair<u64, u64>>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i].first) + "-" + std::to_string(v[i].second);
    }
    return s;
}

inline std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

// "random" or a decimal in [0, 1).
inline bool valid_point_value(const std::string& s) {
    if (s == "random") return true;
    double v = 0;
    return parse_double_value(s, v) && v >= 0.0 && v < 1.0;
}

}  // namespace detail

inline const std::set<std::string>& known_verbs() {
    static const std::set<std::string> verbs = {
        "measure-vn", "measure-pair", "union-bound", "interval-lemma", "limsup", "kurzweil",
        "fixed-center", "marchese", "loglaw", "alpha-survey", "equidist"};
    return verbs;
}

struct ParsedConfig {
    std::optional<RunConfig> config;
    std::vector<ConfigError> errors;
};

// Full effective schema, sorted keys, out/workers excluded.
inline std::string canonicalize(const RunConfig& c) {
    std::map<std::string, std::string> kv;
    kv["alpha"] = c.alpha_str;
    kv["alpha_samples"] = std::to_string(c.alpha_samples);
    kv["cells"] = std::to_string(c.cells);
    kv["center"] = c.center_str;
    kv["draws"] = std::to_string(c.draws);
    kv["e_max"] = std::to_string(c.e_max);
    kv["e_min"] = std::to_string(c.e_min);
    if (c.gate_tail) kv["gate_tail"] = detail::fmt_double(*c.gate_tail);
    kv["instances"] = std::to_string(c.instances);
    kv["k"] = std::to_string(c.k_div);
    kv["map"] = c.map_spec;
    kv["method"] = c.method;
    kv["n0"] = std::to_string(c.n0);
    kv["n_list"] = detail::join_u64(c.n_list);
    kv["n_max"] = std::to_string(c.n_max);
    kv["N"] = std::to_string(c.n_horizon);
    kv["pairs"] = detail::join_pairs(c.pairs);
    kv["Q"] = std::to_string(c.q);
    kv["samples"] = std::to_string(c.samples);
    kv["seed"] = std::to_string(c.seed);
    kv["seq"] = c.seq_spec;
    kv["t"] = std::to_string(c.t);
    if (!c.tails.empty()) kv["tails"] = detail::join_u64(c.tails);
    kv["theta"] = detail::fmt_double(c.theta);
    kv["verb"] = c.verb;
    kv["x"] = c.x_str;
    kv["y"] = c.y_str;
    std::string text;
    for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
    return text;
}

inline ParsedConfig parse_config(const std::string& text) {
    ParsedConfig result;
    RunConfig cfg;
    std::vector<ConfigError>& errs = result.errors;

    // line -> (key, value), with duplicate detection
    std::map<std::string, std::pair<std::string, int>> seen;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        line_no += 1;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            errs.push_back({line_no, "expected key=value, got '" + line + "'"});
            continue;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) {
            errs.push_back({line_no, "empty key"});
            continue;
        }
        const auto it = seen.find(key);
        if (it != seen.end()) {
            errs.push_back({line_no, "duplicate key '" + key + "' (first set at line " +
                                         std::to_string(it->second.second) + ")"});
            continue;
        }
        seen[key] = {value, line_no};
    }

    auto take_u64 = [&](const char* key, u64& dst, u64 min_v) {
        const auto it = seen.find(key);
        if (it == seen.end()) return;
        u64 v = 0;
        if (!detail::parse_u64_value(it->second.first, v) || v < min_v)
            errs.push_back({it->second.second, std::string("bad value for '") + key + "': '" +
                                                   it->second.first + "'"});
        else
            dst = v;
    };
    auto take_double = [&](const char* key, double& dst) {
        const auto it = seen.find(key);
        if (it == seen.end()) return;
        double v = 0;
        if (!detail::parse_double_value(it->second.first, v))
            errs.push_back({it->second.second, std::string("bad value for '") + key + "': '" +
                                                   it->second.first + "'"});
        else
            dst = v;
    };
    auto take_string = [&](const char* key, std::string& dst) {
        const auto it = seen.find(key);
        if (it != seen.end()) dst = it->second.first;
    };

    static const std::set<std::string> known_keys = {
        "verb",    "map",    "seq",   "Q",     "N",       "samples", "y_samples",
        "alpha_samples", "draws", "instances", "seed",  "tails", "out",     "t",
        "n0",      "n_list", "pairs", "theta", "e_min",   "e_max",   "n_max",
        "cells",   "k",      "alpha", "x",     "y",       "center",  "method",
        "gate_tail", "workers"};
    for (const auto& [key, vp] : seen)
        if (!known_keys.count(key)) errs.push_back({vp.second, "unknown key '" + key + "'"});

    take_string("verb", cfg.verb);
    if (cfg.verb.empty()) {
        errs.push_back({0, "missing required key 'verb'"});
    } else if (!known_verbs().count(cfg.verb)) {
        errs.push_back({seen.count("verb") ? seen["verb"].second : 0,
                        "unknown verb '" + cfg.verb + "'"});
    }

    take_string("map", cfg.map_spec);
    take_string("seq", cfg.seq_spec);
    take_string("out", cfg.out_dir);
    take_string("method", cfg.method);
    take_string("alpha", cfg.alpha_str);
    take_string("x", cfg.x_str);
    take_string("y", cfg.y_str);
    take_string("center", cfg.center_str);

    u64 qv = static_cast<u64>(cfg.q);
    take_u64("Q", qv, 1);
    if (seen.count("Q") && (qv < 16 || qv > 128))
        errs.push_back({seen["Q"].second, "Q must lie in [16, 128]"});
    else
        cfg.q = static_cast<int>(qv);

    take_u64("N", cfg.n_horizon, 1);
    take_u64("samples", cfg.samples, 1);
    take_u64("y_samples", cfg.y_samples, 1);
    take_u64("alpha_samples", cfg.alpha_samples, 1);
    take_u64("draws", cfg.draws, 1);
    take_u64("instances", cfg.instances, 1);
    take_u64("seed", cfg.seed, 0);
    take_u64("t", cfg.t, 1);
    take_u64("n0", cfg.n0, 1);
    take_u64("n_max", cfg.n_max, 1);
    take_u64("cells", cfg.cells, 2);
    take_u64("k", cfg.k_div, 1);
    take_u64("workers", cfg.workers, 1);
    take_double("theta", cfg.theta);
    if (seen.count("gate_tail")) {
        double g = 0;
        if (!detail::parse_double_value(seen["gate_tail"].first, g))
            errs.push_back({seen["gate_tail"].second, "bad value for 'gate_tail'"});
        else
            cfg.gate_tail = g;
    }

    u64 ei = static_cast<u64>(cfg.e_min), ea = static_cast<u64>(cfg.e_max);
    take_u64("e_min", ei, 1);
    take_u64("e_max", ea, 1);
    cfg.e_min = static_cast<int>(ei);
    cfg.e_max = static_cast<int>(ea);
    if (cfg.e_min > cfg.e_max)
        errs.push_back({seen.count("e_min") ? seen["e_min"].second : 0, "e_min exceeds e_max"});

    if (seen.count("tails") && !detail::parse_u64_list(seen["tails"].first, cfg.tails))
        errs.push_back({seen["tails"].second, "bad value for 'tails'"});
    if (seen.count("n_list") && !detail::parse_u64_list(seen["n_list"].first, cfg.n_list))
        errs.push_back({seen["n_list"].second, "bad value for 'n_list'"});
    if (seen.count("pairs") && !detail::parse_pair_list(seen["pairs"].first, cfg.pairs))
        errs.push_back({seen["pairs"].second, "bad value for 'pairs' (expect j-k,j-k,...)"});

    if (cfg.method != "mc" && cfg.method != "exhaustive" && cfg.method != "both")
        errs.push_back({seen.count("method") ? seen["method"].second : 0,
                        "method must be mc, exhaustive, or both"});

    for (const char* key : {"alpha", "x", "y", "center"}) {
        const auto it = seen.find(key);
        const std::string& v = key == std::string("alpha")  ? cfg.alpha_str
                               : key == std::string("x")    ? cfg.x_str
                               : key == std::string("y")    ? cfg.y_str
                                                            : cfg.center_str;
        if (!detail::valid_point_value(v))
            errs.push_back({it != seen.end() ? it->second.second : 0,
                            std::string("bad point value for '") + key +
                                "': expect 'random' or a decimal in [0,1)"});
    }

    // Grammar validation; draws inside random IET specs use a throwaway RNG.
    if (cfg.q >= 16 && cfg.q <= 128) {
        if (seen.count("map") || cfg.verb == "measure-vn" || cfg.verb == "measure-pair") {
            try {
                (void)parse_map(cfg.map_spec, cfg.q, RngKey{0, 0});
            } catch (const std::exception& e) {
                errs.push_back({seen.count("map") ? seen["map"].second : 0,
                                std::string("bad map spec: ") + e.what()});
            }
        }
        try {
            (void)parse_sequence(cfg.seq_spec);
        } catch (const std::exception& e) {
            errs.push_back({seen.count("seq") ? seen["seq"].second : 0,
                            std::string("bad sequence spec: ") + e.what()});
        }
    }

    if (!errs.empty()) return result;
    cfg.canonical_text = canonicalize(cfg);
    cfg.config_hash = sha256_hex(cfg.canonical_text);
    result.config = std::move(cfg);
    return result;
}

}  // namespace stp
