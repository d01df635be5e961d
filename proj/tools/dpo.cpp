#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dpo/commands.hpp"
#include "dpo/config.hpp"
#include "dpo/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Spectral-residual portfolio research engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;
    std::string log_level = "info";

    auto* config_opt = app.add_option("--config", config_path, "Config file (TOML-style key/value)");
    auto* out_opt = app.add_option("--out", out_dir, "Output directory");
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed, overrides the config value");
    app.add_option("--set", sets, "Override a config key: section.key=value")->take_all();
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
    app.fallthrough();

    for (const auto& name : dpo::commands::command_names()) app.add_subcommand(name, "Run the " + name + " stage");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    const std::string command = app.get_subcommands().front()->get_name();
    dpo::config::RunConfig cfg;
    try {
        dpo::config::Overrides overrides;
        if (*out_opt) overrides.out = out_dir;
        if (*seed_opt) overrides.seed = seed;
        overrides.set = sets;
        std::optional<std::filesystem::path> path;
        if (*config_opt) path = config_path;
        cfg = dpo::config::load(path, overrides);
    } catch (const dpo::Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    try {
        dpo::commands::run(command, cfg);
    } catch (const std::exception& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
