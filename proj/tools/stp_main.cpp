#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "stp/runner.hpp"

namespace {

int load_config(const std::string& path, stp::RunConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot read config file: " << path << "\n";
        return 1;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const stp::ParsedConfig parsed = stp::parse_config(buf.str());
    if (!parsed.config) {
        for (const auto& e : parsed.errors)
            std::cerr << path << ":" << e.line << ": " << e.message << "\n";
        std::cerr << "error: " << parsed.errors.size() << " config error(s)\n";
        return 1;
    }
    cfg = *parsed.config;
    return 0;
}

// Only the output directory and the worker count may come from the
// environment; everything else lives in the config so the hash is complete.
int apply_env_overrides(stp::RunConfig& cfg) {
    if (const char* out = std::getenv("STP_OUT")) cfg.out_dir = out;
    if (const char* w = std::getenv("STP_WORKERS")) {
        stp::u64 v = 0;
        if (!stp::detail::parse_u64_value(w, v) || v < 1) {
            std::cerr << "error: STP_WORKERS must be a positive integer, got '" << w << "'\n";
            return 1;
        }
        cfg.workers = v;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exact shrinking-target experiments on the quantized circle"};
    app.require_subcommand(1);

    std::string run_path;
    bool force = false;
    CLI::App* run = app.add_subcommand("run", "execute a config and write artifacts");
    run->add_option("config", run_path, "config file (key=value lines)")->required();
    run->add_flag("--force", force, "allow writing into a non-empty output directory");

    std::string check_path;
    CLI::App* validate = app.add_subcommand("validate", "check a config without running");
    validate->add_option("config", check_path, "config file (key=value lines)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (validate->parsed()) {
            stp::RunConfig cfg;
            if (const int rc = load_config(check_path, cfg)) return rc;
            std::cout << "config ok\nhash " << cfg.config_hash << "\n" << cfg.canonical_text;
            return 0;
        }
        stp::RunConfig cfg;
        if (const int rc = load_config(run_path, cfg)) return rc;
        if (const int rc = apply_env_overrides(cfg)) return rc;
        const stp::RunResult res = stp::run_config(cfg, force);
        if (!res.message.empty()) std::cerr << res.message << "\n";
        for (const auto& g : res.gates)
            std::cout << (g.passed ? "PASS " : "FAIL ") << g.name << "  " << g.detail << "\n";
        if (res.exit_code == 0) std::cout << "ok: " << res.out_dir << "\n";
        return res.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
