#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dpo/data_ingest.hpp"
#include "dpo/spectral.hpp"

namespace dpo::portfolio {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kVarianceFloor = 1e-12;
inline constexpr double kDegenerateL1 = 1e-12;

struct Portfolio {
    std::size_t t = 0;  // decision date index
    std::string date;
    VectorXd weights;
    bool degenerate = false;  // the flagged all-zero portfolio
};

// b_j = mu_j / (lambda * max(var_j, floor)).
VectorXd residual_weights(const VectorXd& mu_hat, const VectorXd& var_hat, double lambda = 1.0);

// b = A^T b_res.
VectorXd map_to_assets(const spectral::ResidualProjection& proj, const VectorXd& b_res);

// (b - mean) / ||b - mean||_1, or the flagged zero portfolio.
Portfolio normalize_zero_investment(const VectorXd& b, std::size_t t = 0, std::string date = {});

struct ReturnSeries {
    std::vector<std::size_t> t;  // decision date index of each R_t
    std::vector<std::string> dates;
    VectorXd values;
};

// R_t = b_t . r_{t+d}; portfolios whose t + d falls outside the panel are dropped.
ReturnSeries realized_returns(const std::vector<Portfolio>& portfolios, const ReturnPanel& returns, std::size_t d);

struct Metrics {
    double CW = 1.0;
    double AR = 0.0;
    double AVOL = 0.0;
    std::optional<double> ASR;  // empty when AVOL == 0
    double MDD = 0.0;
    std::optional<double> CR;   // empty when MDD == 0
    std::optional<double> DDR;  // empty when there is no downside
    std::size_t periods = 0;
};

Metrics metrics(const VectorXd& R, double periods_per_year = 252.0);
VectorXd cumulative_wealth(const VectorXd& R);
nlohmann::json to_json(const Metrics& m);

// Constant 1/S buy-and-hold weights, not zero-investment.
std::vector<Portfolio> baseline_market(std::size_t S, const std::vector<std::size_t>& ts,
                                       const std::vector<std::string>& dates = {});

// Reversal signal -(x_{t-1} - mean(x_{t-1})) before normalization.
VectorXd ar1_signal(const VectorXd& previous);
// Reversal portfolios for each date index t >= 1 over a date x asset series.
std::vector<Portfolio> baseline_ar1(const MatrixXd& series, const std::vector<std::size_t>& ts,
                                    const std::vector<std::string>& dates = {});

// Intercept-free least squares of y on its H preceding values, one
// coefficient vector shared by every asset.
struct LinearModel {
    VectorXd coef;  // coef[k] multiplies x_{t-H+k}
    bool ridge = false;

    double predict(const VectorXd& window) const { return coef.dot(window); }
};

LinearModel fit_linear(const MatrixXd& series, std::size_t H, std::size_t first, std::size_t split);
std::vector<Portfolio> baseline_linear(const MatrixXd& series, const LinearModel& model,
                                       const std::vector<std::size_t>& ts,
                                       const std::vector<std::string>& dates = {});

}  // namespace dpo::portfolio
