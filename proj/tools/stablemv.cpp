#include <CLI11.hpp>

#include <iostream>

#include "experiment_runner.hpp"

namespace cli = stablemv::cli;
namespace fs = std::filesystem;

namespace {

cli::LoadedConfig load(const std::string& config_path, const cli::Overrides& ov) {
    nlohmann::json raw = nlohmann::json::object();
    fs::path dir = fs::current_path();
    if (!config_path.empty()) {
        raw = cli::read_config_file(config_path);
        dir = fs::absolute(config_path).parent_path();
    }
    auto cfg = cli::load_config(raw, ov);
    cfg.config_dir = dir;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulation and verification experiments for stable-driven McKean-Vlasov equations"};
    app.set_version_flag("--version", cli::kVersion);
    app.require_subcommand(1);

    std::string config_path, experiment, out_dir;
    std::uint64_t seed = 0;
    unsigned threads = 0;

    auto* run = app.add_subcommand("run", "run one experiment and write its artifacts");
    run->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    run->add_option("--experiment", experiment, "experiment name (overrides the config)");
    run->add_option("--out", out_dir, "output directory");
    auto* seed_opt = run->add_option("--seed", seed, "master seed (overrides the config)");
    run->add_option("--threads", threads, "worker threads, 0 for all cores")->capture_default_str();

    auto* validate = app.add_subcommand("validate", "check a config without running it");
    validate->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    validate->add_option("--experiment", experiment, "experiment name (overrides the config)");

    auto* list = app.add_subcommand("list", "list experiments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (list->parsed()) {
        for (const auto& e : cli::experiments()) std::cout << e.name << "\t" << e.summary << '\n';
        return 0;
    }

    cli::Overrides ov;
    if (!experiment.empty()) ov.experiment = experiment;
    if (*seed_opt) ov.seed = seed;
    if (!out_dir.empty()) ov.out = out_dir;

    cli::LoadedConfig cfg;
    try {
        cfg = load(config_path, ov);
    } catch (const stablemv::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    if (validate->parsed()) {
        if (cfg.errors.empty()) {
            std::cout << "ok: " << cfg.experiment << '\n';
            return 0;
        }
        for (const auto& e : cfg.errors) std::cerr << "error: " << e << '\n';
        return 1;
    }

    if (config_path.empty() && experiment.empty()) {
        std::cerr << "error: run needs --config or --experiment\n";
        return 1;
    }
    const auto dir = cli::output_directory(cfg, ov);
    const int rc = cli::run_experiment(cfg, dir, threads);
    if (rc == 0) std::cout << "wrote " << dir.string() << '\n';
    return rc;
}
