#include "dpo/backtest.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dpo/errors.hpp"
#include "dpo/io.hpp"

namespace dpo::backtest {

namespace {

using Eigen::Index;
using portfolio::Portfolio;

Index idx(std::size_t v) { return static_cast<Index>(v); }

struct Named {
    Strategy strategy;
    const char* name;
};

constexpr Named kNames[] = {
    {Strategy::Market, "market"}, {Strategy::Ar1, "ar1"},     {Strategy::Linear, "linear"},
    {Strategy::Mlp, "mlp"},       {Strategy::Dpo, "dpo"},     {Strategy::DpoNq, "dpo_nq"},
    {Strategy::DpoNf, "dpo_nf"},  {Strategy::DpoNv, "dpo_nv"},
};

bool on_residuals(Strategy s, const BacktestConfig& cfg) {
    switch (s) {
        case Strategy::Market: return false;
        case Strategy::Ar1:
        case Strategy::Linear:
        case Strategy::Mlp: return cfg.on_residuals;
        default: return true;
    }
}

std::size_t linear_window(const BacktestConfig& cfg) { return cfg.linear_H > 0 ? cfg.linear_H : cfg.network.H; }

std::string date_at(const ReturnPanel& r, std::size_t t) { return t < r.dates.size() ? r.dates[t] : std::string{}; }

// Residual-space signal -> asset weights -> zero-investment portfolio.
Portfolio finish(const VectorXd& signal, std::size_t t, bool residual, const Prepared& data) {
    const VectorXd b = residual ? data.residuals.apply(t, signal) : signal;
    return portfolio::normalize_zero_investment(b, t, date_at(*data.returns, t));
}

void run_network(Strategy s, const Prepared& data, const BacktestConfig& cfg, bool residual, StrategyResult& out) {
    const ReturnPanel& panel = *data.returns;
    const MatrixXd& series = residual ? data.residuals.residuals : panel.returns;
    const std::size_t first = residual ? data.residuals.first : 0;
    const nn::NetworkSpec spec = network_for(s, cfg);
    const bool quantile = spec.objective == nn::Objective::Quantile;
    const auto& test = data.timeline.test;

    std::vector<std::size_t> starts{data.timeline.split};
    if (cfg.retrain_every > 0) {
        for (std::size_t t = data.timeline.split + cfg.retrain_every; !test.empty() && t <= test.back();
             t += cfg.retrain_every) {
            starts.push_back(t);
        }
    }
    double crossing = 0.0;
    for (std::size_t round = 0; round < starts.size(); ++round) {
        const std::size_t begin = starts[round];
        const std::size_t end = round + 1 < starts.size() ? starts[round + 1] : panel.num_dates();
        std::vector<std::size_t> ts;
        for (auto t : test) {
            if (t >= begin && t < end) ts.push_back(t);
        }
        if (ts.empty()) continue;

        const auto dataset = forecast::build_dataset(series, spec.H, begin, first);
        forecast::TrainConfig tc = cfg.training;
        tc.seed = cfg.training.seed + round;
        auto predictor = forecast::train(dataset, spec, tc);
        auto forecasts = forecast::forecast_dates(predictor.network, series, ts, panel.dates);
        for (const auto& f : forecasts) {
            VectorXd signal;
            if (quantile) {
                const VectorXd risk = cfg.risk == RiskInput::Mad ? VectorXd(f.mad.array().square()) : f.var_hat;
                signal = portfolio::residual_weights(f.mu_hat, risk, cfg.lambda);
            } else {
                signal = f.mu_hat;
            }
            out.portfolios.push_back(finish(signal, f.t, residual, data));
            crossing += forecast::crossing_rate(f.quantiles);
        }
        out.predictors.push_back(std::move(predictor));
        for (auto& f : forecasts) out.forecasts.push_back(std::move(f));
    }
    out.crossing_rate = out.forecasts.empty() ? 0.0 : crossing / static_cast<double>(out.forecasts.size());
    if (quantile && out.crossing_rate > 0.0) {
        spdlog::info("{}: quantile crossing rate {:.4f}", to_string(s), out.crossing_rate);
    }
}

}  // namespace

std::string to_string(Strategy s) {
    for (const auto& n : kNames) {
        if (n.strategy == s) return n.name;
    }
    return "unknown";
}

Strategy strategy_from_string(const std::string& name) {
    for (const auto& n : kNames) {
        if (name == n.name) return n.strategy;
    }
    throw ConfigError(fmt::format("unknown strategy '{}'", name));
}

const std::vector<Strategy>& all_strategies() {
    static const std::vector<Strategy> all = [] {
        std::vector<Strategy> v;
        for (const auto& n : kNames) v.push_back(n.strategy);
        return v;
    }();
    return all;
}

bool uses_network(Strategy s) {
    return s == Strategy::Mlp || s == Strategy::Dpo || s == Strategy::DpoNq || s == Strategy::DpoNf ||
           s == Strategy::DpoNv;
}

nn::NetworkSpec network_for(Strategy s, const BacktestConfig& cfg) {
    nn::NetworkSpec spec = cfg.network;
    switch (s) {
        case Strategy::DpoNq: spec.objective = nn::Objective::MeanSquared; break;
        case Strategy::DpoNf: spec.architecture = nn::Architecture::Mlp; break;
        case Strategy::DpoNv: spec.homogeneous = false; break;
        case Strategy::Mlp:
            spec.architecture = nn::Architecture::Mlp;
            spec.objective = nn::Objective::MeanSquared;
            spec.homogeneous = false;
            break;
        default: break;
    }
    return spec;
}

nlohmann::json to_json(const BacktestConfig& cfg) {
    return {{"H", cfg.window.H},
            {"C", cfg.window.C},
            {"d", cfg.d},
            {"periods_per_year", cfg.periods_per_year},
            {"lambda", cfg.lambda},
            {"train_fraction", cfg.train_fraction},
            {"on_residuals", cfg.on_residuals},
            {"risk", cfg.risk == RiskInput::Mad ? "mad" : "variance"},
            {"retrain_every", cfg.retrain_every},
            {"linear_H", linear_window(cfg)},
            {"network", nn::to_json(cfg.network)},
            {"training",
             {{"epochs", cfg.training.epochs},
              {"batch_size", cfg.training.batch_size},
              {"learning_rate", cfg.training.learning_rate},
              {"seed", cfg.training.seed}}}};
}

Timeline make_timeline(std::size_t T, const BacktestConfig& cfg, bool with_training) {
    if (!(cfg.train_fraction >= 0.0 && cfg.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in [0, 1)");
    std::size_t min_split = cfg.window.H + 1;
    if (with_training) min_split = cfg.window.H + std::max(cfg.network.H, linear_window(cfg)) + 1;
    Timeline tl;
    tl.split = std::max(static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(T))), min_split);
    for (std::size_t t = tl.split; t + cfg.d < T; ++t) tl.test.push_back(t);
    if (tl.test.empty()) {
        throw ConfigError(fmt::format("no test dates: {} dates, split at {}, delay {}", T, tl.split, cfg.d));
    }
    return tl;
}

Prepared prepare(const ReturnPanel& returns, const BacktestConfig& cfg) {
    Prepared p;
    p.returns = &returns;
    p.timeline = make_timeline(returns.num_dates(), cfg, true);
    p.residuals = spectral::rolling_residuals(returns, cfg.window);
    return p;
}

StrategyResult run_strategy(Strategy s, const Prepared& data, const BacktestConfig& cfg) {
    const ReturnPanel& panel = *data.returns;
    const bool residual = on_residuals(s, cfg);
    const auto& test = data.timeline.test;
    StrategyResult out;
    out.strategy = s;
    const std::string stage = to_string(s);
    try {
        switch (s) {
            case Strategy::Market:
                out.portfolios = portfolio::baseline_market(panel.num_assets(), test, panel.dates);
                break;
            case Strategy::Ar1: {
                const MatrixXd& series = residual ? data.residuals.residuals : panel.returns;
                for (auto t : test) {
                    out.portfolios.push_back(
                        finish(portfolio::ar1_signal(series.row(idx(t - 1)).transpose()), t, residual, data));
                }
                break;
            }
            case Strategy::Linear: {
                const MatrixXd& series = residual ? data.residuals.residuals : panel.returns;
                const std::size_t H = linear_window(cfg);
                const auto model =
                    portfolio::fit_linear(series, H, residual ? data.residuals.first : 0, data.timeline.split);
                for (auto t : test) {
                    const VectorXd pred = series.middleRows(idx(t - H), idx(H)).transpose() * model.coef;
                    out.portfolios.push_back(finish(pred, t, residual, data));
                }
                break;
            }
            default: run_network(s, data, cfg, residual, out); break;
        }
        for (const auto& p : out.portfolios) out.degenerate += p.degenerate ? 1 : 0;
        if (out.degenerate > 0) spdlog::warn("{}: {} degenerate date(s) held the zero portfolio", stage, out.degenerate);
        out.returns = portfolio::realized_returns(out.portfolios, panel, cfg.d);
        out.metrics = portfolio::metrics(out.returns.values, cfg.periods_per_year);
    } catch (const TrainingError&) {
        throw;
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("strategy {}: {}", stage, e.what()));
    } catch (const WindowError& e) {
        throw WindowError(fmt::format("strategy {}: {}", stage, e.what()));
    } catch (const ShapeError& e) {
        throw ShapeError(fmt::format("strategy {}: {}", stage, e.what()));
    } catch (const Error& e) {
        throw Error(fmt::format("strategy {}: {}", stage, e.what()));
    }
    return out;
}

StrategyResult run_strategy(Strategy s, const ReturnPanel& returns, const BacktestConfig& cfg) {
    return run_strategy(s, prepare(returns, cfg), cfg);
}

std::vector<SweepRow> sweep_C(const ReturnPanel& returns, const std::vector<std::size_t>& Cs,
                              const BacktestConfig& cfg) {
    const Timeline tl = make_timeline(returns.num_dates(), cfg, false);
    std::vector<SweepRow> rows;
    for (auto C : Cs) {
        BacktestConfig c = cfg;
        c.window.C = C;
        Prepared p;
        p.returns = &returns;
        p.timeline = tl;
        p.residuals = spectral::rolling_residuals(returns, c.window);
        std::vector<Portfolio> ports;
        for (auto t : tl.test) {
            ports.push_back(finish(portfolio::ar1_signal(p.residuals.residuals.row(idx(t - 1)).transpose()), t, true, p));
        }
        const auto series = portfolio::realized_returns(ports, returns, cfg.d);
        rows.push_back({C, portfolio::metrics(series.values, cfg.periods_per_year)});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    const auto opt = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string{}; };
    std::string out = "C,ASR,AR,AVOL,DDR,CR,MDD\n";
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out += fmt::format("{},{},{},{},{},{},{}\n", r.C, opt(m.ASR), io::format_double(m.AR),
                           io::format_double(m.AVOL), opt(m.DDR), opt(m.CR), io::format_double(m.MDD));
    }
    return out;
}

std::string returns_csv(const portfolio::ReturnSeries& series) {
    std::string out = "date,R,CW\n";
    const VectorXd cw = portfolio::cumulative_wealth(series.values);
    for (Index k = 0; k < series.values.size(); ++k) {
        out += fmt::format("{},{},{}\n", series.dates[static_cast<std::size_t>(k)], io::format_double(series.values(k)),
                           io::format_double(cw(k)));
    }
    return out;
}

std::string weights_csv(const std::vector<Portfolio>& portfolios, const std::vector<std::string>& symbols) {
    std::string out = "date";
    for (const auto& s : symbols) out += "," + s;
    out += '\n';
    for (const auto& p : portfolios) {
        out += p.date;
        for (Index i = 0; i < p.weights.size(); ++i) out += "," + io::format_double(p.weights(i));
        out += '\n';
    }
    return out;
}

}  // namespace dpo::backtest
