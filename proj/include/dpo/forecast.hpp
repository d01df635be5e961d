#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dpo/nn.hpp"

namespace dpo::forecast {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Sample {
    std::size_t asset = 0;
    std::size_t t = 0;  // target date; features are rows [t - H, t)
};

// Windows of a date x asset series paired with the next value. Rows before
// `first` of the series are not valid observations (e.g. residual dates
// without a fitted projection) and never enter a feature window.
struct ForecastDataset {
    MatrixXd series;  // T x S
    std::size_t H = 0;
    std::size_t first = 0;
    std::size_t split = 0;  // train/validation targets < split <= test targets
    std::vector<Sample> train, validation, test;

    MatrixXd features(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) const;
    VectorXd targets(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) const;
};

// Samples are ordered by date then asset. The last `validation_fraction` of
// the pre-split target dates form the validation set.
ForecastDataset build_dataset(const MatrixXd& series, std::size_t H, std::size_t split, std::size_t first = 0,
                              double validation_fraction = 0.2);

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 1024;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
};

struct CurvePoint {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;  // NaN when there is no validation set
};

struct TrainedPredictor {
    nn::Network network;
    TrainConfig config;
    std::vector<CurvePoint> history;

    nlohmann::json to_json() const;
    static TrainedPredictor from_json(const nlohmann::json& j);
};

// Mini-batch Adam over shuffled training samples. Single threaded and fully
// determined by the seed.
TrainedPredictor train(const ForecastDataset& data, const nn::NetworkSpec& spec, const TrainConfig& cfg);

// Eval-mode objective over a sample list.
double evaluate_loss(const nn::Network& net, const ForecastDataset& data, const std::vector<Sample>& samples);

// Eval-mode outputs for H x N windows, evaluated in fixed chunks of columns.
MatrixXd predict(const nn::Network& net, const MatrixXd& windows);

struct Moments {
    double mu_hat = 0.0;
    double var_hat = 0.0;  // mean squared deviation of the quantiles
    double mad = 0.0;      // median absolute deviation from the median
};

Moments moments(const VectorXd& quantiles);

struct QuantileForecast {
    std::size_t t = 0;
    std::string date;
    MatrixXd quantiles;  // S x outputs
    VectorXd mu_hat, var_hat, mad;
};

// One forecast per requested date, each from the H rows preceding it.
std::vector<QuantileForecast> forecast_dates(const nn::Network& net, const MatrixXd& series,
                                             const std::vector<std::size_t>& ts,
                                             const std::vector<std::string>& dates = {});

// Fraction of adjacent quantile pairs that are out of order.
double crossing_rate(const MatrixXd& quantiles);

std::string forecasts_csv(const std::vector<QuantileForecast>& forecasts, const std::vector<std::string>& symbols);
std::string learning_curve_csv(const std::vector<CurvePoint>& history);

namespace serial {
MatrixXd predict(const nn::Network& net, const MatrixXd& windows);
}  // namespace serial

}  // namespace dpo::forecast
