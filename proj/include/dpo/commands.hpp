#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dpo/config.hpp"
#include "dpo/data_ingest.hpp"

namespace dpo::commands {

struct MarketData {
    ReturnPanel returns;
    std::optional<SyntheticMarket> market;  // set for synthetic sources
};

// Synthetic spec or price file, whichever the config names.
MarketData load_market(const config::RunConfig& cfg);

// Each command writes its outputs under cfg.out via temp-then-rename.
void cmd_simulate(const config::RunConfig& cfg);
void cmd_extract(const config::RunConfig& cfg);
void cmd_train(const config::RunConfig& cfg);
void cmd_backtest(const config::RunConfig& cfg);
void cmd_sweep_c(const config::RunConfig& cfg);
void cmd_stability(const config::RunConfig& cfg);
void cmd_report(const config::RunConfig& cfg);

const std::vector<std::string>& command_names();
void run(const std::string& command, const config::RunConfig& cfg);

// Notes on how ambiguous definitions were read, echoed into every report.
std::vector<std::string> interpretation_log();

}  // namespace dpo::commands
