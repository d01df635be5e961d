#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dpo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Aligned date x asset panel of positive prices. Row t is dates[t].
struct PricePanel {
    std::vector<std::string> dates;
    std::vector<std::string> symbols;
    MatrixXd prices;  // T x S
};

// Simple returns r_t = p_{t+1}/p_t - 1; dates[t] is the date of p_t.
struct ReturnPanel {
    std::vector<std::string> dates;
    std::vector<std::string> symbols;
    MatrixXd returns;  // (T-1) x S

    std::size_t num_dates() const { return static_cast<std::size_t>(returns.rows()); }
    std::size_t num_assets() const { return static_cast<std::size_t>(returns.cols()); }
};

enum class CsvLayout { Auto, Long, Wide };

struct ColumnMap {
    std::string date = "date";
    std::string symbol = "symbol";
    std::string price = "open";
};

struct LoadOptions {
    CsvLayout layout = CsvLayout::Auto;
    ColumnMap columns;
    // Empty means every symbol present in the file.
    std::vector<std::string> symbols;
};

// Long files have one (date, symbol, price) row per observation; wide files
// have a date column followed by one price column per symbol. The result is
// the strict intersection of dates on which every requested symbol has a
// price, sorted by date.
PricePanel load_price_panel(const std::filesystem::path& source, const LoadOptions& options = {});

ReturnPanel compute_returns(const PricePanel& panel);

// Inverse of compute_returns given the first price row.
PricePanel cumulate_prices(const ReturnPanel& returns, const VectorXd& initial_prices);

struct FactorModelSpec {
    std::size_t S = 0;
    std::size_t C_true = 0;
    MatrixXd B;          // S x C_true loadings
    double factor_vol = 1.0;
    VectorXd residual_vols;  // length S
    std::uint64_t seed = 0;
};

// Regime-switching variant used for strategy studies: a two-state Markov
// chain scales factor volatility, and residuals are increments of
// per-asset mean-reverting (Ornstein-Uhlenbeck) levels.
struct RegimeMarketSpec {
    std::size_t S = 40;
    std::size_t C_true = 3;
    MatrixXd B;                // S x C_true; generated from the seed when empty
    double calm_factor_vol = 0.006;
    double stressed_factor_vol = 0.03;
    double stay_calm = 0.98;      // P(calm -> calm)
    double stay_stressed = 0.95;  // P(stressed -> stressed)
    double reversion = 0.15;      // OU pull per day on the residual level
    double min_residual_vol = 0.004;
    double max_residual_vol = 0.03;
    VectorXd residual_vols;    // drawn log-uniformly between the bounds when empty
    std::uint64_t seed = 0;
};

struct SyntheticMarket {
    ReturnPanel returns;
    MatrixXd factors;    // T x C_true
    MatrixXd residuals;  // T x S
    FactorModelSpec spec;
    std::vector<int> regimes;  // per-date regime flag, empty for the Gaussian model
};

// r_t = B f_t + eps_t with f ~ N(0, factor_vol^2 I), eps ~ N(0, diag(sigma^2)).
SyntheticMarket generate_factor_market(const FactorModelSpec& spec, std::size_t T);
SyntheticMarket generate_regime_market(const RegimeMarketSpec& spec, std::size_t T);

// ISO-8601 business-day calendar starting 2000-01-03.
std::vector<std::string> synthetic_dates(std::size_t count);
std::vector<std::string> synthetic_symbols(std::size_t count);

void write_wide_prices(const std::filesystem::path& path, const PricePanel& panel);
void write_market_sidecar(const std::filesystem::path& path, const SyntheticMarket& market);

}  // namespace dpo
