#include "dpo/commands.hpp"

#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dpo/backtest.hpp"
#include "dpo/errors.hpp"
#include "dpo/forecast.hpp"
#include "dpo/io.hpp"
#include "dpo/spectral.hpp"

namespace dpo::commands {

namespace fs = std::filesystem;

namespace {

using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_json(const fs::path& path, const nlohmann::json& j) { io::write_file_atomic(path, dump(j)); }

nlohmann::json envelope(const config::RunConfig& cfg, const std::string& command) {
    return {{"command", command}, {"config", config::to_json(cfg)}, {"interpretation", interpretation_log()}};
}

std::string wide_csv(const std::vector<std::string>& dates, const std::vector<std::string>& symbols, const MatrixXd& M,
                     std::size_t first) {
    std::string out = "date";
    for (const auto& s : symbols) out += "," + s;
    out += '\n';
    for (std::size_t t = first; t < static_cast<std::size_t>(M.rows()); ++t) {
        out += dates[t];
        for (Index j = 0; j < M.cols(); ++j) out += "," + io::format_double(M(idx(t), j));
        out += '\n';
    }
    return out;
}

std::vector<std::size_t> test_dates_of(const backtest::Prepared& p) { return p.timeline.test; }

}  // namespace

std::vector<std::string> interpretation_log() {
    return {
        "weights: residual-space weight is predicted mean divided by lambda times predicted variance (variance floor 1e-12)",
        "variance: population variance of the predicted quantiles (divisor = number of quantiles)",
        "mdd: peak-to-trough drawdown (peak - CW_t)/peak with peaks over CW_1..CW_t",
        "periods_per_year: 252 unless configured",
        "market: uniform 1/S buy-and-hold, exempt from zero-investment normalization",
        "ar1: reversal portfolio from the negated, demeaned previous observation",
        "residual strategies: residual-space signals are mapped to assets through the causal projection A_t, then normalized",
        "mean-only strategies (dpo_nq, mlp): the predicted mean is the residual-space signal",
        "degenerate signals: the flagged zero portfolio, contributing R_t = 0",
    };
}

MarketData load_market(const config::RunConfig& cfg) {
    MarketData md;
    if (cfg.data.source == "file") {
        LoadOptions opts;
        opts.layout = cfg.data.layout;
        opts.columns = cfg.data.columns;
        opts.symbols = cfg.data.symbols;
        md.returns = compute_returns(load_price_panel(cfg.data.path, opts));
        return md;
    }
    const auto& syn = cfg.synthetic;
    if (syn.model == "factor") {
        FactorModelSpec spec;
        spec.S = syn.S;
        spec.C_true = syn.C_true;
        spec.seed = cfg.seed;
        spec.B.resize(idx(syn.S), idx(syn.C_true));
        std::mt19937_64 rng(cfg.seed ^ 0xB5297A4DULL);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Index k = 0; k < spec.B.cols(); ++k) {
            for (Index i = 0; i < spec.B.rows(); ++i) spec.B(i, k) = normal(rng);
        }
        spec.residual_vols = VectorXd::Constant(idx(syn.S), syn.residual_vol);
        md.market = generate_factor_market(spec, syn.T);
    } else {
        RegimeMarketSpec spec = syn.regime;
        spec.S = syn.S;
        spec.C_true = syn.C_true;
        spec.seed = cfg.seed;
        md.market = generate_regime_market(spec, syn.T);
    }
    md.returns = md.market->returns;
    return md;
}

void cmd_simulate(const config::RunConfig& cfg) {
    if (cfg.data.source != "synthetic") throw ConfigError("simulate needs data.source = \"synthetic\"");
    const auto md = load_market(cfg);
    const VectorXd p0 = VectorXd::Constant(idx(md.returns.num_assets()), 100.0);
    write_wide_prices(cfg.out / "prices.csv", cumulate_prices(md.returns, p0));
    write_market_sidecar(cfg.out / "market.json", *md.market);
    io::write_file_atomic(cfg.out / "factors.csv",
                          wide_csv(md.returns.dates, [&] {
                              std::vector<std::string> names;
                              for (Index k = 0; k < md.market->factors.cols(); ++k) names.push_back(fmt::format("f{}", k));
                              return names;
                          }(), md.market->factors, 0));
    auto j = envelope(cfg, "simulate");
    j["dates"] = md.returns.num_dates();
    j["assets"] = md.returns.num_assets();
    write_json(cfg.out / "simulate.json", j);
    spdlog::info("simulate: wrote {} dates x {} assets to {}", md.returns.num_dates() + 1, md.returns.num_assets(),
                 cfg.out.string());
}

void cmd_extract(const config::RunConfig& cfg) {
    const auto md = load_market(cfg);
    const auto rr = spectral::rolling_residuals(md.returns, cfg.backtest.window);
    io::write_file_atomic(cfg.out / "residuals.csv", wide_csv(rr.dates, rr.symbols, rr.residuals, rr.first));
    auto j = envelope(cfg, "extract");
    nlohmann::json dates = nlohmann::json::array();
    nlohmann::json heads = nlohmann::json::array();
    for (std::size_t k = 0; k < rr.trace.size(); ++k) {
        dates.push_back(rr.dates[rr.first + k]);
        const auto& h = rr.spectrum_head[k];
        heads.push_back(std::vector<double>(h.data(), h.data() + h.size()));
    }
    j["H"] = rr.H;
    j["C"] = rr.C;
    j["diagnostics"] = {{"dates", dates}, {"trace", rr.trace}, {"max_offdiag", rr.max_offdiag}, {"spectrum_head", heads}};
    write_json(cfg.out / "diagnostics.json", j);
    spdlog::info("extract: {} residual dates written", rr.trace.size());
}

void cmd_train(const config::RunConfig& cfg) {
    const auto md = load_market(cfg);
    const auto prepared = backtest::prepare(md.returns, cfg.backtest);
    const auto strategy = cfg.train_strategy;
    const auto spec = backtest::network_for(strategy, cfg.backtest);
    const bool residual = strategy != backtest::Strategy::Mlp || cfg.backtest.on_residuals;
    const MatrixXd& series = residual ? prepared.residuals.residuals : md.returns.returns;
    const auto dataset =
        forecast::build_dataset(series, spec.H, prepared.timeline.split, residual ? prepared.residuals.first : 0);
    const auto predictor = forecast::train(dataset, spec, cfg.backtest.training);
    write_json(cfg.out / "checkpoint.json", predictor.to_json());
    io::write_file_atomic(cfg.out / "learning_curve.csv", forecast::learning_curve_csv(predictor.history));
    const auto forecasts =
        forecast::forecast_dates(predictor.network, series, test_dates_of(prepared), md.returns.dates);
    io::write_file_atomic(cfg.out / "forecasts.csv", forecast::forecasts_csv(forecasts, md.returns.symbols));

    auto j = envelope(cfg, "train");
    j["strategy"] = backtest::to_string(strategy);
    j["samples"] = {{"train", dataset.train.size()}, {"validation", dataset.validation.size()}};
    j["final_train_loss"] = predictor.history.empty() ? 0.0 : predictor.history.back().train_loss;
    write_json(cfg.out / "train.json", j);
    spdlog::info("train: {} epochs on {} samples", predictor.history.size(), dataset.train.size());
}

void cmd_backtest(const config::RunConfig& cfg) {
    const auto md = load_market(cfg);
    const auto prepared = backtest::prepare(md.returns, cfg.backtest);
    auto report = envelope(cfg, "backtest");
    report["test_window"] = {{"first", md.returns.dates[prepared.timeline.test.front()]},
                             {"last", md.returns.dates[prepared.timeline.test.back()]},
                             {"decisions", prepared.timeline.test.size()}};
    nlohmann::json results = nlohmann::json::object();
    for (auto s : cfg.strategies) {
        const auto name = backtest::to_string(s);
        spdlog::info("backtest: running {}", name);
        const auto res = backtest::run_strategy(s, prepared, cfg.backtest);
        const fs::path dir = cfg.out / name;
        io::write_file_atomic(dir / "returns.csv", backtest::returns_csv(res.returns));
        io::write_file_atomic(dir / "weights.csv", backtest::weights_csv(res.portfolios, md.returns.symbols));
        nlohmann::json entry = portfolio::to_json(res.metrics);
        entry["degenerate_dates"] = res.degenerate;
        if (!res.forecasts.empty()) {
            io::write_file_atomic(dir / "forecasts.csv", forecast::forecasts_csv(res.forecasts, md.returns.symbols));
            entry["crossing_rate"] = res.crossing_rate;
            std::vector<forecast::CurvePoint> curve;
            for (const auto& p : res.predictors) curve.insert(curve.end(), p.history.begin(), p.history.end());
            io::write_file_atomic(dir / "learning_curve.csv", forecast::learning_curve_csv(curve));
            entry["network"] = nn::to_json(res.predictors.front().network.spec());
        }
        results[name] = entry;
    }
    report["strategies"] = results;
    write_json(cfg.out / "report.json", report);
}

void cmd_sweep_c(const config::RunConfig& cfg) {
    const auto md = load_market(cfg);
    const auto rows = backtest::sweep_C(md.returns, cfg.sweep.Cs, cfg.backtest);
    io::write_file_atomic(cfg.out / "sweep.csv", backtest::sweep_csv(rows));
    auto j = envelope(cfg, "sweep-c");
    nlohmann::json table = nlohmann::json::array();
    for (const auto& r : rows) {
        auto m = portfolio::to_json(r.metrics);
        m["C"] = r.C;
        table.push_back(m);
    }
    j["rows"] = table;
    write_json(cfg.out / "sweep.json", j);
}

void cmd_stability(const config::RunConfig& cfg) {
    const auto md = load_market(cfg);
    const auto curve =
        spectral::local_stability(md.returns, cfg.stability.H, cfg.stability.Cs, cfg.stability.stride);
    std::string out = "C,delta,ratio\n";
    for (std::size_t c = 0; c < curve.Cs.size(); ++c) {
        for (std::size_t k = 0; k < curve.deltas.size(); ++k) {
            out += fmt::format("{},{},{}\n", curve.Cs[c], curve.deltas[k], io::format_double(curve.ratio[c][k]));
        }
    }
    io::write_file_atomic(cfg.out / "stability.csv", out);
    write_json(cfg.out / "stability.json", envelope(cfg, "stability"));
}

void cmd_report(const config::RunConfig& cfg) {
    if (cfg.report_input.empty()) throw ConfigError("report needs report.input (a backtest output directory or report.json)");
    fs::path file = cfg.report_input;
    if (fs::is_directory(file)) file /= "report.json";
    if (!fs::exists(file)) throw DataError(fmt::format("'{}' does not exist", file.string()));
    nlohmann::json report;
    try {
        report = nlohmann::json::parse(io::read_file(file));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("{}: {}", file.string(), e.what()));
    }
    const fs::path base = file.parent_path();

    std::string metrics = "strategy,metric,value\n";
    std::string wealth = "strategy,date,R,CW\n";
    for (const auto& [name, entry] : report.at("strategies").items()) {
        for (const char* key : {"CW", "AR", "AVOL", "ASR", "MDD", "CR", "DDR"}) {
            const auto& v = entry.at(key);
            metrics += fmt::format("{},{},{}\n", name, key, v.is_null() ? std::string{} : io::format_double(v.get<double>()));
        }
        const fs::path returns = base / name / "returns.csv";
        if (!fs::exists(returns)) continue;
        std::istringstream in(io::read_file(returns));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            wealth += name + "," + line + "\n";
        }
    }
    io::write_file_atomic(cfg.out / "metrics_long.csv", metrics);
    io::write_file_atomic(cfg.out / "wealth_long.csv", wealth);
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"simulate", "extract", "train", "backtest", "sweep-c", "stability", "report"};
    return names;
}

void run(const std::string& command, const config::RunConfig& cfg) {
    if (command == "simulate") cmd_simulate(cfg);
    else if (command == "extract") cmd_extract(cfg);
    else if (command == "train") cmd_train(cfg);
    else if (command == "backtest") cmd_backtest(cfg);
    else if (command == "sweep-c") cmd_sweep_c(cfg);
    else if (command == "stability") cmd_stability(cfg);
    else if (command == "report") cmd_report(cfg);
    else throw ConfigError(fmt::format("unknown command '{}'", command));
}

}  // namespace dpo::commands
