#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "stp/runner.hpp"

using namespace stp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Fresh scratch tree per test case, removed on scope exit.
struct ScratchDir {
    fs::path root;
    explicit ScratchDir(const std::string& tag)
        : root(fs::temp_directory_path() / ("stp_cli_" + tag)) {
        fs::remove_all(root);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
    std::string sub(const std::string& name) const { return (root / name).string(); }
};

bool has_error(const ParsedConfig& pc, const std::string& needle, int line = -1) {
    for (const auto& e : pc.errors)
        if (e.message.find(needle) != std::string::npos && (line < 0 || e.line == line))
            return true;
    return false;
}

RunConfig parse_ok(const std::string& text) {
    const ParsedConfig pc = parse_config(text);
    std::string errs;
    for (const auto& e : pc.errors)
        errs += "line " + std::to_string(e.line) + ": " + e.message + "; ";
    INFO(errs);
    REQUIRE(pc.errors.empty());
    REQUIRE(pc.config.has_value());
    return *pc.config;
}

size_t count_lines(const std::string& s) {
    size_t n = 0;
    for (char c : s)
        if (c == '\n') n += 1;
    return n;
}

const char* kDefaultCanonical =
    "N=1000\n"
    "Q=64\n"
    "alpha=random\n"
    "alpha_samples=100\n"
    "cells=65536\n"
    "center=0.5\n"
    "draws=10\n"
    "e_max=14\n"
    "e_min=5\n"
    "instances=1000\n"
    "k=128\n"
    "map=rot:0.25\n"
    "method=mc\n"
    "n0=1\n"
    "n_list=1,3,10,50\n"
    "n_max=10000000\n"
    "pairs=1-2,2-5,3-17\n"
    "samples=100000\n"
    "seed=1\n"
    "seq=bprime(harmonic:1)\n"
    "t=1\n"
    "theta=0.5\n"
    "verb=measure-vn\n"
    "x=random\n"
    "y=random\n";

const char* kDefaultHash = "f5646ffc9dfe3b84a0183391a8e5026e160db0e0b710e795fbb8ea8737e25f1b";

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
    const RunConfig cfg = parse_ok("verb=measure-vn\n");
    CHECK(cfg.verb == "measure-vn");
    CHECK(cfg.map_spec == "rot:0.25");
    CHECK(cfg.seq_spec == "bprime(harmonic:1)");
    CHECK(cfg.q == 64);
    CHECK(cfg.n_horizon == 1000);
    CHECK(cfg.samples == 100000);
    CHECK(cfg.y_samples == 1000);
    CHECK(cfg.alpha_samples == 100);
    CHECK(cfg.draws == 10);
    CHECK(cfg.instances == 1000);
    CHECK(cfg.seed == 1);
    CHECK(cfg.tails.empty());
    CHECK(cfg.out_dir == "out");
    CHECK(cfg.t == 1);
    CHECK(cfg.n0 == 1);
    CHECK(cfg.n_list == std::vector<u64>{1, 3, 10, 50});
    REQUIRE(cfg.pairs.size() == 3);
    CHECK(cfg.pairs[2] == std::pair<u64, u64>{3, 17});
    CHECK(cfg.theta == 0.5);
    CHECK(cfg.e_min == 5);
    CHECK(cfg.e_max == 14);
    CHECK(cfg.n_max == 10000000);
    CHECK(cfg.cells == 65536);
    CHECK(cfg.k_div == 128);
    CHECK(cfg.method == "mc");
    CHECK_FALSE(cfg.gate_tail.has_value());
    CHECK(cfg.workers == 1);
}

TEST_CASE("canonical text is the sorted effective schema with a stable hash") {
    const RunConfig cfg = parse_ok("verb=measure-vn\n");
    CHECK(cfg.canonical_text == kDefaultCanonical);
    CHECK(count_lines(cfg.canonical_text) == 25);
    CHECK(cfg.config_hash == kDefaultHash);
    CHECK(cfg.config_hash == sha256_hex(cfg.canonical_text));

    // Comments, blank lines, and whitespace do not affect the hash.
    const RunConfig same = parse_ok("  verb = measure-vn   # default run\n\n# nothing else\n");
    CHECK(same.canonical_text == cfg.canonical_text);
    CHECK(same.config_hash == kDefaultHash);
}

TEST_CASE("hash covers settings but excludes out and workers") {
    const RunConfig moved = parse_ok("verb=measure-vn\nout=/tmp/elsewhere\nworkers=8\n");
    CHECK(moved.out_dir == "/tmp/elsewhere");
    CHECK(moved.workers == 8);
    CHECK(moved.config_hash == kDefaultHash);
    CHECK(moved.canonical_text.find("out=") == std::string::npos);
    CHECK(moved.canonical_text.find("workers=") == std::string::npos);

    const RunConfig gated = parse_ok("verb=limsup\ngate_tail=0.9\ntails=10,20\n");
    CHECK(gated.canonical_text.find("gate_tail=0.9\n") != std::string::npos);
    CHECK(gated.canonical_text.find("tails=10,20\n") != std::string::npos);
    CHECK(gated.canonical_text.find("verb=limsup\n") != std::string::npos);
    CHECK(gated.config_hash != kDefaultHash);

    const RunConfig seeded = parse_ok("verb=measure-vn\nseed=2\n");
    CHECK(seeded.config_hash != kDefaultHash);
}

TEST_CASE("spec-style minimal limsup config is accepted") {
    const RunConfig cfg = parse_ok("verb=limsup\nmap=rot:0.4142\nseq=harmonic:1\nN=1000\nseed=1\n");
    CHECK(cfg.verb == "limsup");
    CHECK(cfg.n_horizon == 1000);
}

TEST_CASE("every config error is reported with its line") {
    const std::string doc =
        "verb=warp\n"
        "Q=12\n"
        "bogus = 3\n"
        "Q=64\n"
        "theta=abc\n"
        "just-noise\n";
    const ParsedConfig pc = parse_config(doc);
    CHECK_FALSE(pc.config.has_value());
    CHECK(pc.errors.size() == 6);
    CHECK(has_error(pc, "unknown verb 'warp'", 1));
    CHECK(has_error(pc, "Q must lie in [16, 128]", 2));
    CHECK(has_error(pc, "unknown key 'bogus'", 3));
    CHECK(has_error(pc, "duplicate key 'Q' (first set at line 2)", 4));
    CHECK(has_error(pc, "bad value for 'theta'", 5));
    CHECK(has_error(pc, "expected key=value", 6));
}

TEST_CASE("grammar and domain validation rejects bad values") {
    CHECK(has_error(parse_config("verb=measure-vn\nmap=times:4\n"), "bad map spec", 2));
    CHECK(has_error(parse_config("verb=limsup\nseq=zeta:2\n"), "bad sequence spec", 2));
    CHECK(has_error(parse_config("verb=limsup\ne_min=9\ne_max=5\n"), "e_min exceeds e_max", 2));
    CHECK(has_error(parse_config("verb=limsup\nmethod=fast\n"),
                    "method must be mc, exhaustive, or both", 2));
    CHECK(has_error(parse_config("verb=limsup\nalpha=1.5\n"), "bad point value for 'alpha'", 2));
    CHECK(has_error(parse_config("verb=limsup\nx=abc\n"), "bad point value for 'x'", 2));
    CHECK(has_error(parse_config("verb=limsup\ntails=5,,9\n"), "bad value for 'tails'", 2));
    CHECK(has_error(parse_config("verb=measure-pair\npairs=1-2,7\n"),
                    "bad value for 'pairs'", 2));
    CHECK(has_error(parse_config("verb=measure-vn\nn_list=3,zebra\n"),
                    "bad value for 'n_list'", 2));
    CHECK(has_error(parse_config("verb=measure-vn\nN=0\n"), "bad value for 'N'", 2));
    CHECK(has_error(parse_config("N=5\n"), "missing required key 'verb'"));
    CHECK(has_error(parse_config("verb=limsup\nQ=129\n"), "Q must lie in [16, 128]", 2));
    CHECK(parse_config("verb=limsup\nQ=16\n").config.has_value());
    CHECK(parse_config("verb=limsup\nQ=128\n").config.has_value());
}

TEST_CASE("kurzweil run writes a complete checked artifact set") {
    ScratchDir scratch("kurzweil");
    RunConfig cfg = parse_ok(
        "verb=kurzweil\nQ=32\nN=400\ny_samples=80\nseq=harmonic:1\nseed=7\n"
        "tails=1,100,200\ngate_tail=0.05\n");
    cfg.out_dir = scratch.sub("a");
    const RunResult res = run_config(cfg, false);
    CHECK(res.exit_code == 0);
    CHECK(res.message.empty());
    REQUIRE(res.gates.size() == 1);
    CHECK(res.gates[0].name == "tail_fraction_gate");
    CHECK(res.gates[0].passed);

    const fs::path dir(cfg.out_dir);
    for (const char* name : {"kurzweil.csv", "tail_fraction.svg", "summary.json", "manifest.json"})
        CHECK(fs::exists(dir / name));
    CHECK_FALSE(fs::exists(dir / "manifest.json.tmp"));

    const std::string csv = slurp(dir / "kurzweil.csv");
    CHECK(csv.rfind("sample,last_hit_index_steps,method\n", 0) == 0);
    CHECK(count_lines(csv) == 81);  // header + one row per y sample
    CHECK(csv.find('\r') == std::string::npos);

    const ordered_json manifest = ordered_json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["config_hash"].get<std::string>() == cfg.config_hash);
    CHECK(manifest["tool_version"].get<std::string>() == "0.1.0");
    CHECK(manifest["verb"].get<std::string>() == "kurzweil");
    REQUIRE(manifest["files"].size() == 3);
    for (const auto& fj : manifest["files"]) {
        const std::string bytes = slurp(dir / fj["name"].get<std::string>());
        CHECK(fj["bytes"].get<size_t>() == bytes.size());
        CHECK(fj["sha256"].get<std::string>() == sha256_hex(bytes));
    }

    const ordered_json summary = ordered_json::parse(slurp(dir / "summary.json"));
    CHECK(summary["config_hash"].get<std::string>() == cfg.config_hash);
    CHECK(summary["config"]["N"].get<std::string>() == "400");
    CHECK(summary["config"]["verb"].get<std::string>() == "kurzweil");
    REQUIRE(summary["tail_fractions"].size() == 3);
    // b_1 clamps to the half-circle radius, so every orbit hits at n = 1.
    CHECK(summary["tail_fractions"][0]["fraction"].get<double>() == 1.0);
    CHECK(summary["gates"][0]["name"].get<std::string>() == "tail_fraction_gate");
}

TEST_CASE("reruns and worker counts produce byte-identical artifacts") {
    ScratchDir scratch("determinism");
    RunConfig cfg = parse_ok(
        "verb=kurzweil\nQ=32\nN=300\ny_samples=60\nseq=harmonic:1\nseed=9\ntails=1,150\n");
    cfg.out_dir = scratch.sub("w1");
    REQUIRE(run_config(cfg, false).exit_code == 0);

    RunConfig rerun = cfg;
    rerun.out_dir = scratch.sub("w1_again");
    REQUIRE(run_config(rerun, false).exit_code == 0);

    RunConfig wide = cfg;
    wide.out_dir = scratch.sub("w4");
    wide.workers = 4;
    REQUIRE(run_config(wide, false).exit_code == 0);

    for (const char* name : {"kurzweil.csv", "summary.json", "tail_fraction.svg"}) {
        const std::string base = slurp(fs::path(cfg.out_dir) / name);
        CHECK(slurp(fs::path(rerun.out_dir) / name) == base);
        CHECK(slurp(fs::path(wide.out_dir) / name) == base);
    }
    // Manifests differ only in wall clock; the inventory must agree.
    const ordered_json m1 = ordered_json::parse(slurp(fs::path(cfg.out_dir) / "manifest.json"));
    const ordered_json m4 = ordered_json::parse(slurp(fs::path(wide.out_dir) / "manifest.json"));
    CHECK(m1["files"] == m4["files"]);
    CHECK(m1["config_hash"] == m4["config_hash"]);
    CHECK(m1["gates"] == m4["gates"]);
}

TEST_CASE("output directories are append-only without force") {
    ScratchDir scratch("force");
    RunConfig cfg = parse_ok(
        "verb=kurzweil\nQ=32\nN=200\ny_samples=40\nseq=harmonic:1\nseed=5\ntails=1,100\n");
    cfg.out_dir = scratch.sub("a");
    REQUIRE(run_config(cfg, false).exit_code == 0);

    const RunResult refused = run_config(cfg, false);
    CHECK(refused.exit_code == 1);
    CHECK(refused.message.rfind("output directory not empty", 0) == 0);
    CHECK(refused.message.find(cfg.out_dir) != std::string::npos);
    CHECK(refused.gates.empty());

    CHECK(run_config(cfg, true).exit_code == 0);
}

TEST_CASE("gate failure exits 2 and the manifest records the gate") {
    ScratchDir scratch("gatefail");
    RunConfig cfg = parse_ok(
        "verb=kurzweil\nQ=32\nN=200\ny_samples=40\nseq=harmonic:1\nseed=5\n"
        "tails=1,100\ngate_tail=1.5\n");
    cfg.out_dir = scratch.sub("a");
    const RunResult res = run_config(cfg, false);
    CHECK(res.exit_code == 2);
    CHECK(res.message == "gate failed: tail_fraction_gate");

    const fs::path dir(cfg.out_dir);
    CHECK(fs::exists(dir / "summary.json"));  // gates still produce full output
    const ordered_json manifest = ordered_json::parse(slurp(dir / "manifest.json"));
    REQUIRE(manifest["gates"].size() == 1);
    CHECK(manifest["gates"][0]["name"].get<std::string>() == "tail_fraction_gate");
    CHECK_FALSE(manifest["gates"][0]["passed"].get<bool>());
    CHECK(manifest["gates"][0]["detail"].get<std::string>().find(
              "bad sample or slow convergence") != std::string::npos);
}

TEST_CASE("measure-vn run emits the closed form alongside the estimate") {
    ScratchDir scratch("measure");
    RunConfig cfg = parse_ok(
        "verb=measure-vn\nQ=32\nmap=rot:0.4142\nn_list=3\nsamples=20000\nseed=3\n");
    cfg.out_dir = scratch.sub("a");
    const RunResult res = run_config(cfg, false);
    CHECK(res.exit_code == 0);
    REQUIRE(res.gates.size() == 1);
    CHECK(res.gates[0].name == "strip_mc_4sigma_n3");
    CHECK(res.gates[0].passed);

    const DerivedSequence bp(parse_sequence("bprime(harmonic:1)").base, 3);
    const double closed = 2.0 * bp.radius(3, 32).value();
    const std::string csv = slurp(fs::path(cfg.out_dir) / "measure_vn.csv");
    CHECK(csv.find(fmt_float(closed)) != std::string::npos);
    const ordered_json summary = ordered_json::parse(slurp(fs::path(cfg.out_dir) / "summary.json"));
    CHECK(summary["rows"][0]["closed_form"].get<double>() == closed);
    CHECK(summary["realized"]["map"]["kind"].get<std::string>() == "rotation");
}

TEST_CASE("union-bound run certifies the window and the eighth bound") {
    ScratchDir scratch("union");
    RunConfig cfg = parse_ok(
        "verb=union-bound\nQ=32\nmap=rot:0.4142\nt=1\nn0=1\nN=1024\nsamples=20000\nseed=3\n");
    cfg.out_dir = scratch.sub("a");
    const RunResult res = run_config(cfg, false);
    CHECK(res.exit_code == 0);
    for (const auto& g : res.gates) {
        CAPTURE(g.name);
        CHECK(g.passed);
    }
    const ordered_json summary = ordered_json::parse(slurp(fs::path(cfg.out_dir) / "summary.json"));
    CHECK(summary["selected_N"].get<u64>() == 11);
    const double two_sigma = summary["two_sigma"].get<double>();
    CHECK(two_sigma > 0.375);
    CHECK(two_sigma < 0.5);
    CHECK(summary["certified_bound"].get<double>() > 0.125);
    CHECK(summary["realized"]["derive_horizon"].get<u64>() == 1024);
    const std::string csv = slurp(fs::path(cfg.out_dir) / "union_bound.csv");
    CHECK(csv.rfind("t,n0,N,two_sigma_measure,window_ok,certified_bound_measure,"
                    "estimate_measure,std_error_measure,samples_count,method\n",
                    0) == 0);
}

TEST_CASE("interval-lemma run passes every instance") {
    ScratchDir scratch("lemma");
    RunConfig cfg = parse_ok(
        "verb=interval-lemma\ncells=12800\nk=128\ninstances=25\nseed=11\n");
    cfg.out_dir = scratch.sub("a");
    const RunResult res = run_config(cfg, false);
    CHECK(res.exit_code == 0);
    REQUIRE(res.gates.size() == 1);
    CHECK(res.gates[0].name == "all_instances_pass");
    CHECK(res.gates[0].passed);
    const std::string csv = slurp(fs::path(cfg.out_dir) / "interval_lemma.csv");
    CHECK(count_lines(csv) == 26);
    const ordered_json summary = ordered_json::parse(slurp(fs::path(cfg.out_dir) / "summary.json"));
    CHECK(summary["passed"].get<u64>() == 25);
}

TEST_CASE("equidist run reports a shrinking discrepancy") {
    ScratchDir scratch("equidist");
    RunConfig cfg = parse_ok(
        "verb=equidist\nQ=32\nmap=times:3\nalpha=0.6180339887498949\nx=0.2\ny=0.37\n"
        "N=100000\nseed=4\n");
    cfg.out_dir = scratch.sub("a");
    const RunResult res = run_config(cfg, false);
    CHECK(res.exit_code == 0);
    REQUIRE(res.gates.size() == 1);
    CHECK(res.gates[0].name == "discrepancy_decreasing");
    CHECK(res.gates[0].passed);
    const ordered_json summary = ordered_json::parse(slurp(fs::path(cfg.out_dir) / "summary.json"));
    CHECK(summary["last"].get<double>() < summary["first"].get<double>());
    CHECK(summary["realized"]["alpha_hex"].get<std::string>() == "0x9e3779b9");
    CHECK(fs::exists(fs::path(cfg.out_dir) / "equidist.svg"));
}

TEST_CASE("exhaustive method is rejected at runtime for configured Q") {
    ScratchDir scratch("exhaustive");
    RunConfig cfg = parse_ok("verb=measure-vn\nmethod=exhaustive\nQ=16\n");
    cfg.out_dir = scratch.sub("a");
    CHECK_THROWS_WITH_AS(run_config(cfg, false), "exhaustive method requires Q <= 12",
                         std::invalid_argument);
}
