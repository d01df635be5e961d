#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpo/data_ingest.hpp"
#include "dpo/forecast.hpp"
#include "dpo/nn.hpp"
#include "dpo/portfolio.hpp"
#include "dpo/spectral.hpp"

namespace dpo::backtest {

enum class Strategy { Market, Ar1, Linear, Mlp, Dpo, DpoNq, DpoNf, DpoNv };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);
const std::vector<Strategy>& all_strategies();
bool uses_network(Strategy s);

enum class RiskInput { Variance, Mad };

struct BacktestConfig {
    spectral::WindowConfig window;  // residual extraction
    std::size_t d = 1;
    double periods_per_year = 252.0;
    double lambda = 1.0;
    double train_fraction = 0.5;  // dates before the test period
    bool on_residuals = true;     // AR(1), Linear and MLP run on spectral residuals
    RiskInput risk = RiskInput::Variance;
    std::size_t retrain_every = 0;  // 0 trains once and freezes
    std::size_t linear_H = 0;       // 0 means the network window length
    nn::NetworkSpec network;        // the DPO network; ablations change one field
    forecast::TrainConfig training;
};

nlohmann::json to_json(const BacktestConfig& cfg);

// The network each strategy trains. DPO-NQ, DPO-NF and DPO-NV each differ
// from DPO in exactly one field; MLP is the plain mean regressor.
nn::NetworkSpec network_for(Strategy s, const BacktestConfig& cfg);

struct Timeline {
    std::size_t split = 0;  // first test decision date
    std::vector<std::size_t> test;
};

// Test decisions run over [split, T - d). The split leaves room for the
// residual window plus one training window when `with_training` is set.
Timeline make_timeline(std::size_t T, const BacktestConfig& cfg, bool with_training);

// Rolling residuals are shared by every strategy run on the same panel.
struct Prepared {
    const ReturnPanel* returns = nullptr;
    spectral::RollingResiduals residuals;
    Timeline timeline;
};

Prepared prepare(const ReturnPanel& returns, const BacktestConfig& cfg);

struct StrategyResult {
    Strategy strategy = Strategy::Market;
    std::vector<portfolio::Portfolio> portfolios;
    portfolio::ReturnSeries returns;
    portfolio::Metrics metrics;
    std::vector<forecast::QuantileForecast> forecasts;
    std::vector<forecast::TrainedPredictor> predictors;  // one per training round
    std::size_t degenerate = 0;
    double crossing_rate = 0.0;
};

StrategyResult run_strategy(Strategy s, const Prepared& data, const BacktestConfig& cfg);
StrategyResult run_strategy(Strategy s, const ReturnPanel& returns, const BacktestConfig& cfg);

struct SweepRow {
    std::size_t C = 0;
    portfolio::Metrics metrics;
};

// AR(1) reversal on spectral residuals for each C over a common test window.
std::vector<SweepRow> sweep_C(const ReturnPanel& returns, const std::vector<std::size_t>& Cs,
                              const BacktestConfig& cfg);
std::string sweep_csv(const std::vector<SweepRow>& rows);

std::string returns_csv(const portfolio::ReturnSeries& series);
std::string weights_csv(const std::vector<portfolio::Portfolio>& portfolios, const std::vector<std::string>& symbols);

}  // namespace dpo::backtest
