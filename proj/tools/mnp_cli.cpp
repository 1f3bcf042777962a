#include "mnp/cli.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv)
{
    CLI::App app{"Plasmon resonance and localization toolkit: batch runs from JSON configs"};
    std::string config;
    mnp::cli::Options opt;
    double tol = 0;
    bool version = false;
    app.add_option("--config", config, "JSON run configuration");
    app.add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    auto* tol_opt = app.add_option("--tol", tol, "override the command's default tolerance");
    app.add_option("--threads", opt.threads, "worker threads (default: MNP_THREADS, then 1)");
    app.add_option("--seed", opt.seed, "seed for randomized inputs")->capture_default_str();
    app.add_flag("--version", version, "print version and quadrature settings");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << mnp::cli::error_json("validation", e.what(), "arguments", 1).dump() << "\n";
        return 1;
    }
    if (version) {
        std::printf("mnp_cli %s\nquadrature_scheme=%s\n", mnp::cli::version, mnp::cli::quad_scheme);
        return 0;
    }
    if (config.empty()) {
        std::cerr << mnp::cli::error_json("validation", "--config is required", "--config", 1).dump() << "\n";
        return 1;
    }
    if (*tol_opt) opt.tol = tol;
    return mnp::cli::run_file(config, opt).exit_code;
}
