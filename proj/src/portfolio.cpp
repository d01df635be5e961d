#include "dpo/portfolio.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dpo/errors.hpp"

namespace dpo::portfolio {

namespace {

using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::string date_at(const std::vector<std::string>& dates, std::size_t t) { return t < dates.size() ? dates[t] : std::string{}; }

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

VectorXd residual_weights(const VectorXd& mu_hat, const VectorXd& var_hat, double lambda) {
    if (mu_hat.size() != var_hat.size()) throw ShapeError("mean and variance forecasts differ in length");
    if (!(lambda > 0.0)) throw DomainError("risk aversion must be positive");
    VectorXd b(mu_hat.size());
    for (Index j = 0; j < b.size(); ++j) b(j) = mu_hat(j) / (lambda * std::max(var_hat(j), kVarianceFloor));
    return b;
}

VectorXd map_to_assets(const spectral::ResidualProjection& proj, const VectorXd& b_res) {
    if (proj.A.cols() != b_res.size()) throw ShapeError("residual weights do not match the projection size");
    return proj.A.transpose() * b_res;
}

Portfolio normalize_zero_investment(const VectorXd& b, std::size_t t, std::string date) {
    Portfolio p;
    p.t = t;
    p.date = std::move(date);
    p.weights = VectorXd::Zero(b.size());
    if (b.size() == 0) {
        p.degenerate = true;
        return p;
    }
    const VectorXd centered = b.array() - b.mean();
    const double l1 = centered.lpNorm<1>();
    if (!(l1 > kDegenerateL1) || !std::isfinite(l1)) {
        p.degenerate = true;
        spdlog::debug("date {}: degenerate signal, emitting the zero portfolio", t);
        return p;
    }
    p.weights = centered / l1;
    return p;
}

ReturnSeries realized_returns(const std::vector<Portfolio>& portfolios, const ReturnPanel& returns, std::size_t d) {
    const std::size_t T = returns.num_dates();
    ReturnSeries out;
    std::vector<double> values;
    for (const auto& p : portfolios) {
        if (p.t + d >= T) continue;
        if (p.weights.size() != returns.returns.cols()) throw ShapeError("portfolio width does not match the panel");
        out.t.push_back(p.t);
        out.dates.push_back(p.date.empty() ? date_at(returns.dates, p.t) : p.date);
        values.push_back(p.weights.dot(returns.returns.row(idx(p.t + d)).transpose()));
    }
    if (values.empty()) throw ConfigError(fmt::format("no portfolio has a return {} day(s) later inside the panel", d));
    out.values = Eigen::Map<VectorXd>(values.data(), idx(values.size()));
    return out;
}

VectorXd cumulative_wealth(const VectorXd& R) {
    VectorXd cw(R.size());
    double w = 1.0;
    for (Index t = 0; t < R.size(); ++t) {
        w *= 1.0 + R(t);
        cw(t) = w;
    }
    return cw;
}

Metrics metrics(const VectorXd& R, double periods_per_year) {
    if (R.size() == 0) throw DataError("metrics need a non-empty return series");
    if (!(periods_per_year > 0.0)) throw ConfigError("periods per year must be positive");
    Metrics m;
    m.periods = static_cast<std::size_t>(R.size());
    const double scale = periods_per_year / static_cast<double>(R.size());
    const VectorXd cw = cumulative_wealth(R);
    m.CW = cw(cw.size() - 1);
    m.AR = scale * R.sum();
    m.AVOL = std::sqrt(scale * R.squaredNorm());
    if (m.AVOL > 0.0) m.ASR = m.AR / m.AVOL;

    // Peaks range over CW_1..CW_t, the first period included.
    double peak = cw(0);
    for (Index t = 0; t < cw.size(); ++t) {
        peak = std::max(peak, cw(t));
        if (peak > 0.0) m.MDD = std::max(m.MDD, (peak - cw(t)) / peak);
    }
    if (m.MDD > 0.0) m.CR = m.AR / m.MDD;

    const double downside = std::sqrt(scale * R.cwiseMin(0.0).squaredNorm());
    if (downside > 0.0) m.DDR = m.AR / downside;
    return m;
}

nlohmann::json to_json(const Metrics& m) {
    return {{"CW", m.CW},   {"AR", m.AR},   {"AVOL", m.AVOL},           {"ASR", optional_json(m.ASR)},
            {"MDD", m.MDD}, {"CR", optional_json(m.CR)}, {"DDR", optional_json(m.DDR)}, {"periods", m.periods}};
}

std::vector<Portfolio> baseline_market(std::size_t S, const std::vector<std::size_t>& ts,
                                       const std::vector<std::string>& dates) {
    if (S == 0) throw ConfigError("market baseline needs at least one asset");
    std::vector<Portfolio> out;
    for (auto t : ts) out.push_back({t, date_at(dates, t), VectorXd::Constant(idx(S), 1.0 / static_cast<double>(S)), false});
    return out;
}

VectorXd ar1_signal(const VectorXd& previous) { return -(previous.array() - previous.mean()).matrix(); }

std::vector<Portfolio> baseline_ar1(const MatrixXd& series, const std::vector<std::size_t>& ts,
                                    const std::vector<std::string>& dates) {
    std::vector<Portfolio> out;
    for (auto t : ts) {
        if (t < 1 || t > static_cast<std::size_t>(series.rows())) throw WindowError("reversal needs the previous date");
        out.push_back(normalize_zero_investment(ar1_signal(series.row(idx(t - 1)).transpose()), t, date_at(dates, t)));
    }
    return out;
}

LinearModel fit_linear(const MatrixXd& series, std::size_t H, std::size_t first, std::size_t split) {
    if (H < 1) throw ConfigError("linear baseline needs H >= 1");
    const std::size_t T = static_cast<std::size_t>(series.rows());
    split = std::min(split, T);
    if (split <= first + H) throw ConfigError("linear baseline has no training samples before the split");
    MatrixXd XtX = MatrixXd::Zero(idx(H), idx(H));
    VectorXd Xty = VectorXd::Zero(idx(H));
    for (std::size_t t = first + H; t < split; ++t) {
        const MatrixXd X = series.middleRows(idx(t - H), idx(H));  // H x S, one column per asset
        XtX.noalias() += X * X.transpose();
        Xty.noalias() += X * series.row(idx(t)).transpose();
    }
    LinearModel model;
    const Eigen::LDLT<MatrixXd> ldlt(XtX);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-12) {
        model.coef = ldlt.solve(Xty);
    }
    if (model.coef.size() == 0 || !model.coef.allFinite()) {
        spdlog::warn("linear baseline: singular normal equations, using ridge penalty 1e-8");
        model.ridge = true;
        model.coef = (XtX + 1e-8 * MatrixXd::Identity(idx(H), idx(H))).ldlt().solve(Xty);
    }
    return model;
}

std::vector<Portfolio> baseline_linear(const MatrixXd& series, const LinearModel& model,
                                       const std::vector<std::size_t>& ts, const std::vector<std::string>& dates) {
    const auto H = static_cast<std::size_t>(model.coef.size());
    std::vector<Portfolio> out;
    for (auto t : ts) {
        if (t < H) throw WindowError(fmt::format("date index {} lacks a window of {}", t, H));
        const VectorXd pred = series.middleRows(idx(t - H), idx(H)).transpose() * model.coef;
        out.push_back(normalize_zero_investment(pred, t, date_at(dates, t)));
    }
    return out;
}

}  // namespace dpo::portfolio
