#include "dpo/data_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "dpo/errors.hpp"
#include "dpo/io.hpp"

namespace dpo {

namespace {

double parse_price(const std::string& text, std::size_t line_no) {
    double value = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw FormatError(fmt::format("line {}: cannot parse price '{}'", line_no, text));
    }
    if (!std::isfinite(value) || value <= 0.0) {
        throw DataError(fmt::format("line {}: non-positive price '{}'", line_no, text));
    }
    return value;
}

std::ptrdiff_t find_column(const std::vector<std::string>& header, const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : std::distance(header.begin(), it);
}

// symbol -> (date -> price), plus symbol order of first appearance.
struct RawObservations {
    std::vector<std::string> symbol_order;
    std::unordered_map<std::string, std::map<std::string, double>> series;

    void add(const std::string& symbol, const std::string& date, double price, std::size_t line_no) {
        auto [it, inserted] = series.try_emplace(symbol);
        if (inserted) symbol_order.push_back(symbol);
        if (!it->second.emplace(date, price).second) {
            throw DataError(fmt::format("line {}: duplicate observation for ({}, {})", line_no, date, symbol));
        }
    }
};

RawObservations read_long(std::ifstream& in, const std::vector<std::string>& header, const ColumnMap& cols) {
    const auto di = find_column(header, cols.date);
    const auto si = find_column(header, cols.symbol);
    const auto pi = find_column(header, cols.price);
    std::vector<std::string> missing;
    if (di < 0) missing.push_back(cols.date);
    if (si < 0) missing.push_back(cols.symbol);
    if (pi < 0) missing.push_back(cols.price);
    if (!missing.empty()) throw FormatError(fmt::format("missing column(s): {}", fmt::join(missing, ", ")));

    RawObservations obs;
    const auto width = static_cast<std::ptrdiff_t>(std::max({di, si, pi}));
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = io::split_csv_line(line);
        if (static_cast<std::ptrdiff_t>(fields.size()) <= width) {
            throw FormatError(fmt::format("line {}: expected at least {} fields", line_no, width + 1));
        }
        obs.add(fields[si], fields[di], parse_price(fields[pi], line_no), line_no);
    }
    return obs;
}

RawObservations read_wide(std::ifstream& in, const std::vector<std::string>& header) {
    RawObservations obs;
    std::string line;
    std::size_t line_no = 1;
    for (std::size_t c = 1; c < header.size(); ++c) {
        obs.symbol_order.push_back(header[c]);
        obs.series[header[c]];
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = io::split_csv_line(line);
        if (fields.size() > header.size()) {
            throw FormatError(fmt::format("line {}: more fields than header columns", line_no));
        }
        for (std::size_t c = 1; c < fields.size(); ++c) {
            if (fields[c].empty()) continue;  // missing cell
            auto& s = obs.series[header[c]];
            if (!s.emplace(fields[0], parse_price(fields[c], line_no)).second) {
                throw DataError(fmt::format("line {}: duplicate date {}", line_no, fields[0]));
            }
        }
    }
    return obs;
}

std::string iso_date(std::chrono::sys_days day) {
    const std::chrono::year_month_day ymd{day};
    return fmt::format("{:04d}-{:02d}-{:02d}", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
}

bool is_weekend(std::chrono::sys_days day) {
    const std::chrono::weekday wd{day};
    return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

std::string next_business_day(const std::string& date) {
    using namespace std::chrono;
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::sscanf(date.c_str(), "%d-%u-%u", &y, &m, &d) != 3) return date + "+1";
    sys_days day{year{y} / month{m} / std::chrono::day{d}};
    do {
        day += days{1};
    } while (is_weekend(day));
    return iso_date(day);
}

}  // namespace

PricePanel load_price_panel(const std::filesystem::path& source, const LoadOptions& options) {
    std::ifstream in(source);
    if (!in) throw FormatError("cannot open price file " + source.string());
    std::string header_line;
    if (!std::getline(in, header_line)) throw FormatError("empty price file " + source.string());
    const auto header = io::split_csv_line(header_line);

    CsvLayout layout = options.layout;
    if (layout == CsvLayout::Auto) {
        const bool is_long = find_column(header, options.columns.symbol) >= 0 &&
                             find_column(header, options.columns.price) >= 0;
        layout = is_long ? CsvLayout::Long : CsvLayout::Wide;
    }
    if (layout == CsvLayout::Wide && (header.empty() || header[0] != options.columns.date)) {
        throw FormatError(fmt::format("missing column(s): {}", options.columns.date));
    }
    const RawObservations obs =
        layout == CsvLayout::Long ? read_long(in, header, options.columns) : read_wide(in, header);

    const std::vector<std::string> symbols = options.symbols.empty() ? obs.symbol_order : options.symbols;
    if (symbols.empty()) throw AlignmentError("no symbols in " + source.string());

    std::set<std::string> common;
    bool first = true;
    for (const auto& sym : symbols) {
        const auto it = obs.series.find(sym);
        if (it == obs.series.end()) throw AlignmentError("symbol not found: " + sym);
        std::set<std::string> dates;
        for (const auto& [d, p] : it->second) {
            if (first || common.count(d)) dates.insert(d);
        }
        common = std::move(dates);
        first = false;
    }
    if (common.empty()) throw AlignmentError("empty date intersection across requested symbols");
    if (common.size() < 2) throw InsufficientDataError("aligned panel has fewer than 2 dates");

    PricePanel panel;
    panel.symbols = symbols;
    panel.dates.assign(common.begin(), common.end());
    panel.prices.resize(static_cast<Eigen::Index>(panel.dates.size()), static_cast<Eigen::Index>(symbols.size()));
    for (std::size_t j = 0; j < symbols.size(); ++j) {
        const auto& s = obs.series.at(symbols[j]);
        for (std::size_t t = 0; t < panel.dates.size(); ++t) {
            panel.prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = s.at(panel.dates[t]);
        }
    }
    return panel;
}

ReturnPanel compute_returns(const PricePanel& panel) {
    const auto T = panel.prices.rows();
    if (T < 2) throw InsufficientDataError("compute_returns needs at least 2 dates");
    ReturnPanel out;
    out.symbols = panel.symbols;
    out.dates.assign(panel.dates.begin(), panel.dates.end() - 1);
    out.returns = (panel.prices.bottomRows(T - 1).array() / panel.prices.topRows(T - 1).array() - 1.0).matrix();
    return out;
}

PricePanel cumulate_prices(const ReturnPanel& returns, const VectorXd& initial_prices) {
    const auto T = returns.returns.rows();
    const auto S = returns.returns.cols();
    if (initial_prices.size() != S) throw ShapeError("initial price vector does not match asset count");
    PricePanel panel;
    panel.symbols = returns.symbols;
    panel.dates = returns.dates;
    panel.dates.push_back(returns.dates.empty() ? synthetic_dates(1).front() : next_business_day(returns.dates.back()));
    panel.prices.resize(T + 1, S);
    panel.prices.row(0) = initial_prices.transpose();
    for (Eigen::Index t = 0; t < T; ++t) {
        panel.prices.row(t + 1) = (panel.prices.row(t).array() * (1.0 + returns.returns.row(t).array())).matrix();
    }
    return panel;
}

std::vector<std::string> synthetic_dates(std::size_t count) {
    using namespace std::chrono;
    std::vector<std::string> dates;
    dates.reserve(count);
    sys_days day{year{2000} / January / 3};
    while (dates.size() < count) {
        if (!is_weekend(day)) dates.push_back(iso_date(day));
        day += days{1};
    }
    return dates;
}

std::vector<std::string> synthetic_symbols(std::size_t count) {
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(fmt::format("A{:03d}", i));
    return out;
}

SyntheticMarket generate_factor_market(const FactorModelSpec& spec, std::size_t T) {
    if (T < 2) throw SpecError("synthetic horizon must be at least 2");
    if (spec.C_true >= spec.S) throw SpecError("factor count must be smaller than asset count");
    const auto S = static_cast<Eigen::Index>(spec.S);
    const auto C = static_cast<Eigen::Index>(spec.C_true);
    if (spec.B.rows() != S || spec.B.cols() != C) throw SpecError("loading matrix must be S x C_true");
    if (spec.residual_vols.size() != S) throw SpecError("residual_vols must have length S");
    if ((spec.residual_vols.array() < 0.0).any()) throw SpecError("residual volatilities must be non-negative");
    if (C > 0) {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(spec.B);
        if (qr.rank() < C) throw SpecError("loading matrix B is rank deficient");
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto TT = static_cast<Eigen::Index>(T);

    SyntheticMarket market;
    market.spec = spec;
    market.factors.resize(TT, C);
    market.residuals.resize(TT, S);
    for (Eigen::Index t = 0; t < TT; ++t) {
        for (Eigen::Index k = 0; k < C; ++k) market.factors(t, k) = spec.factor_vol * normal(rng);
        for (Eigen::Index i = 0; i < S; ++i) market.residuals(t, i) = spec.residual_vols(i) * normal(rng);
    }
    market.returns.returns = market.factors * spec.B.transpose() + market.residuals;
    market.returns.dates = synthetic_dates(T);
    market.returns.symbols = synthetic_symbols(spec.S);
    return market;
}

SyntheticMarket generate_regime_market(const RegimeMarketSpec& spec, std::size_t T) {
    if (T < 2) throw SpecError("synthetic horizon must be at least 2");
    if (spec.C_true >= spec.S) throw SpecError("factor count must be smaller than asset count");
    if (spec.reversion <= 0.0 || spec.reversion >= 1.0) throw SpecError("reversion must lie in (0, 1)");
    const auto S = static_cast<Eigen::Index>(spec.S);
    const auto C = static_cast<Eigen::Index>(spec.C_true);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    MatrixXd B = spec.B;
    if (B.size() == 0) {
        B.resize(S, C);
        for (Eigen::Index i = 0; i < S; ++i) {
            for (Eigen::Index k = 0; k < C; ++k) {
                B(i, k) = k == 0 ? 1.0 + 0.4 * normal(rng) : 0.8 * normal(rng);
            }
        }
    }
    if (B.rows() != S || B.cols() != C) throw SpecError("loading matrix must be S x C_true");
    Eigen::ColPivHouseholderQR<MatrixXd> qr(B);
    if (C > 0 && qr.rank() < C) throw SpecError("loading matrix B is rank deficient");

    VectorXd vols = spec.residual_vols;
    if (vols.size() == 0) {
        vols.resize(S);
        const double lo = std::log(spec.min_residual_vol);
        const double hi = std::log(spec.max_residual_vol);
        for (Eigen::Index i = 0; i < S; ++i) vols(i) = std::exp(lo + (hi - lo) * uniform(rng));
    }
    if (vols.size() != S || (vols.array() <= 0.0).any()) throw SpecError("residual_vols must be positive, length S");

    const double kappa = spec.reversion;
    const double stationary_sd = 1.0 / std::sqrt(2.0 * kappa - kappa * kappa);
    VectorXd level(S);
    for (Eigen::Index i = 0; i < S; ++i) level(i) = vols(i) * stationary_sd * normal(rng);

    const auto TT = static_cast<Eigen::Index>(T);
    SyntheticMarket market;
    market.factors.resize(TT, C);
    market.residuals.resize(TT, S);
    market.regimes.resize(T);
    int regime = 0;
    for (Eigen::Index t = 0; t < TT; ++t) {
        const double u = uniform(rng);
        regime = regime == 0 ? (u < spec.stay_calm ? 0 : 1) : (u < spec.stay_stressed ? 1 : 0);
        market.regimes[static_cast<std::size_t>(t)] = regime;
        const double fvol = regime == 0 ? spec.calm_factor_vol : spec.stressed_factor_vol;
        for (Eigen::Index k = 0; k < C; ++k) market.factors(t, k) = fvol * normal(rng);
        for (Eigen::Index i = 0; i < S; ++i) {
            const double next = (1.0 - kappa) * level(i) + vols(i) * normal(rng);
            market.residuals(t, i) = next - level(i);
            level(i) = next;
        }
    }
    market.returns.returns = market.factors * B.transpose() + market.residuals;
    market.returns.dates = synthetic_dates(T);
    market.returns.symbols = synthetic_symbols(spec.S);
    market.spec.S = spec.S;
    market.spec.C_true = spec.C_true;
    market.spec.B = std::move(B);
    market.spec.factor_vol = spec.calm_factor_vol;
    market.spec.residual_vols = std::move(vols);
    market.spec.seed = spec.seed;
    return market;
}

void write_wide_prices(const std::filesystem::path& path, const PricePanel& panel) {
    std::string out = "date";
    for (const auto& s : panel.symbols) out += "," + s;
    out += "\n";
    for (Eigen::Index t = 0; t < panel.prices.rows(); ++t) {
        out += panel.dates[static_cast<std::size_t>(t)];
        for (Eigen::Index j = 0; j < panel.prices.cols(); ++j) out += "," + io::format_double(panel.prices(t, j));
        out += "\n";
    }
    io::write_file_atomic(path, out);
}

void write_market_sidecar(const std::filesystem::path& path, const SyntheticMarket& market) {
    nlohmann::json j;
    j["S"] = market.spec.S;
    j["C_true"] = market.spec.C_true;
    j["seed"] = market.spec.seed;
    j["factor_vol"] = market.spec.factor_vol;
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < market.spec.B.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index k = 0; k < market.spec.B.cols(); ++k) row.push_back(market.spec.B(i, k));
        rows.push_back(std::move(row));
    }
    j["B"] = std::move(rows);
    j["residual_vols"] = std::vector<double>(market.spec.residual_vols.data(),
                                             market.spec.residual_vols.data() + market.spec.residual_vols.size());
    j["symbols"] = market.returns.symbols;
    io::write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace dpo
