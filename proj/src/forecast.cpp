#include "dpo/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dpo/errors.hpp"
#include "dpo/io.hpp"

namespace dpo::forecast {

namespace {

using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

constexpr std::size_t kPredictChunk = 512;

nn::LossResult objective(const nn::Network& net, const MatrixXd& out, const VectorXd& y) {
    return net.spec().objective == nn::Objective::Quantile ? nn::multi_quantile_loss(out, y)
                                                           : nn::mean_squared_loss(out, y);
}

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MatrixXd predict_chunk(const nn::Network& net, const MatrixXd& windows, Index begin, Index count) {
    return net.infer(windows.middleCols(begin, count));
}

}  // namespace

MatrixXd ForecastDataset::features(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) const {
    MatrixXd X(idx(H), idx(end - begin));
    for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = samples[k];
        X.col(idx(k - begin)) = series.block(idx(s.t - H), idx(s.asset), idx(H), 1);
    }
    return X;
}

VectorXd ForecastDataset::targets(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) const {
    VectorXd y(idx(end - begin));
    for (std::size_t k = begin; k < end; ++k) y(idx(k - begin)) = series(idx(samples[k].t), idx(samples[k].asset));
    return y;
}

ForecastDataset build_dataset(const MatrixXd& series, std::size_t H, std::size_t split, std::size_t first,
                              double validation_fraction) {
    const auto T = static_cast<std::size_t>(series.rows());
    const auto S = static_cast<std::size_t>(series.cols());
    if (H < 1) throw ConfigError("dataset window length must be positive");
    if (T <= first + H) {
        throw InsufficientDataError(
            fmt::format("series has {} rows; need more than {} for a window of {}", T, first + H, H));
    }
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) throw ConfigError("validation fraction must lie in [0, 1)");

    ForecastDataset d;
    d.series = series;
    d.H = H;
    d.first = first;
    d.split = std::clamp(split, first + H, T);

    const std::size_t t0 = first + H;
    const std::size_t pre = d.split - t0;
    const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(pre)));
    const std::size_t val_begin = d.split - n_val;
    for (std::size_t t = t0; t < T; ++t) {
        auto& bucket = t >= d.split ? d.test : (t >= val_begin ? d.validation : d.train);
        for (std::size_t i = 0; i < S; ++i) bucket.push_back({i, t});
    }
    if (d.train.empty()) {
        throw ConfigError(fmt::format("training split is empty: split {} leaves no target date in [{}, {})", split,
                                      t0, d.split));
    }
    return d;
}

double evaluate_loss(const nn::Network& net, const ForecastDataset& data, const std::vector<Sample>& samples) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (std::size_t b = 0; b < samples.size(); b += kPredictChunk) {
        const std::size_t e = std::min(samples.size(), b + kPredictChunk);
        const auto out = net.infer(data.features(samples, b, e));
        total += objective(net, out, data.targets(samples, b, e)).value * static_cast<double>(e - b);
    }
    return total / static_cast<double>(samples.size());
}

TrainedPredictor train(const ForecastDataset& data, const nn::NetworkSpec& spec, const TrainConfig& cfg) {
    if (data.train.empty()) throw ConfigError("training split is empty");
    if (spec.H != data.H) {
        throw ConfigError(fmt::format("network window {} does not match dataset window {}", spec.H, data.H));
    }
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");

    TrainedPredictor out{nn::Network(spec, cfg.seed), cfg, {}};
    nn::Network& net = out.network;
    std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
    nn::Context ctx{nn::Mode::Train, &rng};
    nn::AdamState adam;
    const nn::AdamConfig adam_cfg{cfg.learning_rate};

    std::vector<Sample> order = data.train;
    const std::size_t n = order.size();
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            // Near-equal batch sizes so no batch is a lone sample under batch norm.
            const std::size_t begin = b * n / batches;
            const std::size_t end = (b + 1) * n / batches;
            const auto X = data.features(order, begin, end);
            const auto y = data.targets(order, begin, end);
            net.zero_grad();
            const auto pred = net.forward(X, ctx);
            const auto loss = objective(net, pred, y);
            if (!std::isfinite(loss.value) || !pred.allFinite()) {
                throw TrainingError(fmt::format("non-finite loss {} in batch {} of {} (batch size {})", loss.value,
                                                b, batches, end - begin),
                                    static_cast<int>(epoch));
            }
            net.backward(loss.grad);
            nn::adam_step(net.parameters(), adam, adam_cfg);
            epoch_loss += loss.value * static_cast<double>(end - begin);
        }
        CurvePoint point{epoch, epoch_loss / static_cast<double>(n), evaluate_loss(net, data, data.validation)};
        spdlog::debug("epoch {}: train {:.6g} validation {:.6g}", epoch, point.train_loss, point.validation_loss);
        out.history.push_back(point);
    }
    return out;
}

nlohmann::json TrainedPredictor::to_json() const {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& p : history) {
        hist.push_back({{"epoch", p.epoch},
                        {"train_loss", p.train_loss},
                        {"validation_loss", std::isfinite(p.validation_loss) ? nlohmann::json(p.validation_loss)
                                                                             : nlohmann::json(nullptr)}});
    }
    return {{"network", network.to_json()},
            {"training",
             {{"epochs", config.epochs},
              {"batch_size", config.batch_size},
              {"learning_rate", config.learning_rate},
              {"seed", config.seed}}},
            {"history", std::move(hist)}};
}

TrainedPredictor TrainedPredictor::from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    const auto& t = j.at("training");
    cfg.epochs = t.at("epochs").get<std::size_t>();
    cfg.batch_size = t.at("batch_size").get<std::size_t>();
    cfg.learning_rate = t.at("learning_rate").get<double>();
    cfg.seed = t.at("seed").get<std::uint64_t>();
    TrainedPredictor out{nn::Network::from_json(j.at("network")), cfg, {}};
    for (const auto& p : j.at("history")) {
        const auto& v = p.at("validation_loss");
        out.history.push_back({p.at("epoch").get<std::size_t>(), p.at("train_loss").get<double>(),
                               v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>()});
    }
    return out;
}

MatrixXd predict(const nn::Network& net, const MatrixXd& windows) {
    if (windows.rows() != idx(net.spec().H)) {
        throw ShapeError(fmt::format("prediction windows have length {}, network expects {}", windows.rows(),
                                     net.spec().H));
    }
    const Index N = windows.cols();
    const Index chunks = (N + idx(kPredictChunk) - 1) / idx(kPredictChunk);
    MatrixXd out(idx(net.spec().outputs()), N);
#pragma omp parallel for schedule(static)
    for (Index c = 0; c < chunks; ++c) {
        const Index begin = c * idx(kPredictChunk);
        const Index count = std::min(idx(kPredictChunk), N - begin);
        out.middleCols(begin, count) = predict_chunk(net, windows, begin, count);
    }
    return out;
}

namespace serial {
MatrixXd predict(const nn::Network& net, const MatrixXd& windows) {
    if (windows.rows() != idx(net.spec().H)) throw ShapeError("prediction window length mismatch");
    const Index N = windows.cols();
    MatrixXd out(idx(net.spec().outputs()), N);
    for (Index begin = 0; begin < N; begin += idx(kPredictChunk)) {
        const Index count = std::min(idx(kPredictChunk), N - begin);
        out.middleCols(begin, count) = predict_chunk(net, windows, begin, count);
    }
    return out;
}
}  // namespace serial

Moments moments(const VectorXd& q) {
    if (q.size() == 0) throw ShapeError("moments need at least one quantile");
    Moments m;
    m.mu_hat = q.mean();
    m.var_hat = (q.array() - m.mu_hat).square().mean();
    std::vector<double> values(q.data(), q.data() + q.size());
    const double med = median_of(values);
    for (auto& v : values) v = std::abs(v - med);
    m.mad = median_of(std::move(values));
    return m;
}

std::vector<QuantileForecast> forecast_dates(const nn::Network& net, const MatrixXd& series,
                                             const std::vector<std::size_t>& ts,
                                             const std::vector<std::string>& dates) {
    const std::size_t H = net.spec().H;
    const Index S = series.cols();
    MatrixXd windows(idx(H), idx(ts.size()) * S);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (ts[k] < H || ts[k] > static_cast<std::size_t>(series.rows())) {
            throw WindowError(fmt::format("date index {} lacks a full window of {}", ts[k], H));
        }
        windows.middleCols(idx(k) * S, S) = series.middleRows(idx(ts[k] - H), idx(H));
    }
    const MatrixXd out = predict(net, windows);

    std::vector<QuantileForecast> result;
    result.reserve(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) {
        QuantileForecast f;
        f.t = ts[k];
        if (!dates.empty()) f.date = dates.at(ts[k]);
        f.quantiles = out.middleCols(idx(k) * S, S).transpose();
        f.mu_hat.resize(S);
        f.var_hat.resize(S);
        f.mad.resize(S);
        for (Index i = 0; i < S; ++i) {
            const auto m = moments(f.quantiles.row(i).transpose());
            f.mu_hat(i) = m.mu_hat;
            f.var_hat(i) = m.var_hat;
            f.mad(i) = m.mad;
        }
        result.push_back(std::move(f));
    }
    return result;
}

double crossing_rate(const MatrixXd& quantiles) {
    if (quantiles.cols() < 2 || quantiles.rows() == 0) return 0.0;
    std::size_t crossed = 0;
    for (Index i = 0; i < quantiles.rows(); ++i) {
        for (Index j = 1; j < quantiles.cols(); ++j) crossed += quantiles(i, j) < quantiles(i, j - 1) ? 1 : 0;
    }
    return static_cast<double>(crossed) / static_cast<double>(quantiles.rows() * (quantiles.cols() - 1));
}

std::string forecasts_csv(const std::vector<QuantileForecast>& forecasts, const std::vector<std::string>& symbols) {
    std::string out = "date,symbol,mu_hat,var_hat,mad";
    const Index outputs = forecasts.empty() ? 0 : forecasts.front().quantiles.cols();
    for (Index j = 1; j <= outputs; ++j) out += fmt::format(",q{:02d}", j);
    out += '\n';
    for (const auto& f : forecasts) {
        for (Index i = 0; i < f.quantiles.rows(); ++i) {
            out += fmt::format("{},{},{},{},{}", f.date, symbols.at(static_cast<std::size_t>(i)),
                               io::format_double(f.mu_hat(i)), io::format_double(f.var_hat(i)),
                               io::format_double(f.mad(i)));
            for (Index j = 0; j < f.quantiles.cols(); ++j) out += "," + io::format_double(f.quantiles(i, j));
            out += '\n';
        }
    }
    return out;
}

std::string learning_curve_csv(const std::vector<CurvePoint>& history) {
    std::string out = "epoch,train_loss,validation_loss\n";
    for (const auto& p : history) {
        out += fmt::format("{},{},{}\n", p.epoch, io::format_double(p.train_loss),
                           std::isfinite(p.validation_loss) ? io::format_double(p.validation_loss) : "");
    }
    return out;
}

}  // namespace dpo::forecast
