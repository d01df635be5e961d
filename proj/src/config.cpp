#include "dpo/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "dpo/errors.hpp"
#include "dpo/io.hpp"

namespace dpo::config {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Drops a trailing '#' comment that is not inside a string.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

std::optional<Scalar> parse_scalar(const std::string& text, bool bare_strings) {
    const std::string s = trim(text);
    if (s.empty()) return std::nullopt;
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') return std::nullopt;
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                out += s[++i];
            } else {
                out += s[i];
            }
        }
        return Scalar{out};
    }
    if (s == "true") return Scalar{true};
    if (s == "false") return Scalar{false};
    std::string digits;
    for (char c : s) {
        if (c != '_') digits += c;
    }
    std::int64_t i = 0;
    auto [pi, ei] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
    if (ei == std::errc{} && pi == digits.data() + digits.size()) return Scalar{i};
    double d = 0.0;
    auto [pd, ed] = std::from_chars(digits.data(), digits.data() + digits.size(), d);
    if (ed == std::errc{} && pd == digits.data() + digits.size()) return Scalar{d};
    if (bare_strings) return Scalar{s};
    return std::nullopt;
}

std::vector<std::string> split_array(const std::string& body) {
    std::vector<std::string> parts;
    std::string cur;
    bool quoted = false;
    for (char c : body) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) parts.push_back(cur);
    return parts;
}

std::optional<Value> parse_value(const std::string& text, bool bare_strings, int line) {
    const std::string s = trim(text);
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']') return std::nullopt;
        std::vector<Scalar> items;
        for (const auto& part : split_array(s.substr(1, s.size() - 2))) {
            auto item = parse_scalar(part, bare_strings);
            if (!item) return std::nullopt;
            items.push_back(*item);
        }
        return Value{items, line};
    }
    auto scalar = parse_scalar(s, bare_strings);
    if (!scalar) return std::nullopt;
    return Value{*scalar, line};
}

std::string describe(const Value& v) { return v.line > 0 ? fmt::format(" (line {})", v.line) : std::string(" (override)"); }

// Typed access that records consumed keys and collects problems.
class Reader {
public:
    explicit Reader(const Table& t) : table_(t) {}

    bool has(const std::string& key) const { return table_.count(key) > 0; }

    template <typename T>
    void get(const std::string& key, T& out) {
        const auto it = table_.find(key);
        if (it == table_.end()) return;
        used_.insert(key);
        if (!convert(it->second, out)) errors.push_back(fmt::format("{}: {}{}", key, expectation<T>(), describe(it->second)));
    }

    void require(const std::string& key) {
        if (!has(key)) errors.push_back(fmt::format("{}: required key is missing", key));
    }

    void fail(const std::string& key, const std::string& why) { errors.push_back(fmt::format("{}: {}", key, why)); }

    void report_unknown() {
        for (const auto& [key, value] : table_) {
            if (!used_.count(key)) errors.push_back(fmt::format("{}: unknown key{}", key, describe(value)));
        }
    }

    std::vector<std::string> errors;

private:
    static bool scalar_to(const Scalar& s, bool& out) {
        if (!std::holds_alternative<bool>(s)) return false;
        out = std::get<bool>(s);
        return true;
    }
    static bool scalar_to(const Scalar& s, double& out) {
        if (std::holds_alternative<double>(s)) {
            out = std::get<double>(s);
            return true;
        }
        if (std::holds_alternative<std::int64_t>(s)) {
            out = static_cast<double>(std::get<std::int64_t>(s));
            return true;
        }
        return false;
    }
    static bool scalar_to(const Scalar& s, std::size_t& out) {
        if (!std::holds_alternative<std::int64_t>(s) || std::get<std::int64_t>(s) < 0) return false;
        out = static_cast<std::size_t>(std::get<std::int64_t>(s));
        return true;
    }
    static bool scalar_to(const Scalar& s, std::string& out) {
        if (!std::holds_alternative<std::string>(s)) return false;
        out = std::get<std::string>(s);
        return true;
    }
    static bool scalar_to(const Scalar& s, std::filesystem::path& out) {
        std::string str;
        if (!scalar_to(s, str)) return false;
        out = str;
        return true;
    }

    template <typename T>
    static bool convert(const Value& v, T& out) {
        if (!std::holds_alternative<Scalar>(v.v)) return false;
        return scalar_to(std::get<Scalar>(v.v), out);
    }
    template <typename T>
    static bool convert(const Value& v, std::vector<T>& out) {
        if (!std::holds_alternative<std::vector<Scalar>>(v.v)) return false;
        std::vector<T> items;
        for (const auto& s : std::get<std::vector<Scalar>>(v.v)) {
            T item{};
            if (!scalar_to(s, item)) return false;
            items.push_back(item);
        }
        out = std::move(items);
        return true;
    }

    template <typename T>
    static std::string expectation() {
        if constexpr (std::is_same_v<T, bool>) return "expected true or false";
        else if constexpr (std::is_same_v<T, double>) return "expected a number";
        else if constexpr (std::is_same_v<T, std::size_t>) return "expected a non-negative integer";
        else if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) return "expected a quoted string";
        else return "expected an array of matching values";
    }

    const Table& table_;
    std::set<std::string> used_;
};

nlohmann::json sizes(const std::vector<std::size_t>& v) { return nlohmann::json(v); }

}  // namespace

Table parse(const std::string& text, const std::string& origin) {
    Table table;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::vector<std::string> problems;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[' && line.find('=') == std::string::npos) {
            if (line.back() != ']') {
                problems.push_back(fmt::format("{}:{}: malformed section header", origin, line_no));
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back(fmt::format("{}:{}: expected key = value", origin, line_no));
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        auto value = parse_value(line.substr(eq + 1), false, line_no);
        if (key.empty() || !value) {
            problems.push_back(fmt::format("{}:{}: cannot parse value for '{}'", origin, line_no, key));
            continue;
        }
        const std::string full = section.empty() ? key : section + "." + key;
        if (table.count(full)) problems.push_back(fmt::format("{}:{}: duplicate key '{}'", origin, line_no, full));
        table[full] = *value;
    }
    if (!problems.empty()) throw FormatError(fmt::format("{}", fmt::join(problems, "; ")));
    return table;
}

std::pair<std::string, Value> parse_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError(fmt::format("override '{}' is not key=value", assignment));
    const std::string key = trim(assignment.substr(0, eq));
    auto value = parse_value(assignment.substr(eq + 1), true, 0);
    if (key.empty() || !value) throw ValidationError(fmt::format("override '{}' has no usable value", assignment));
    return {key, *value};
}

RunConfig resolve(const Table& table, bool check_paths) {
    RunConfig cfg;
    Reader r(table);

    r.require("seed");
    {
        std::size_t seed = 0;
        r.get("seed", seed);
        cfg.seed = seed;
    }
    r.get("out", cfg.out);

    auto& data = cfg.data;
    r.get("data.source", data.source);
    r.get("data.path", data.path);
    std::string layout = "auto";
    r.get("data.layout", layout);
    if (layout == "long") data.layout = CsvLayout::Long;
    else if (layout == "wide") data.layout = CsvLayout::Wide;
    else if (layout != "auto") r.fail("data.layout", "expected auto, long or wide");
    r.get("data.date_column", data.columns.date);
    r.get("data.symbol_column", data.columns.symbol);
    r.get("data.price_column", data.columns.price);
    r.get("data.symbols", data.symbols);
    if (data.source == "file") {
        if (data.path.empty()) r.fail("data.path", "required when data.source = \"file\"");
        else if (check_paths && !std::filesystem::exists(data.path)) r.fail("data.path", fmt::format("'{}' does not exist", data.path.string()));
    } else if (data.source != "synthetic") {
        r.fail("data.source", "expected synthetic or file");
    }

    auto& syn = cfg.synthetic;
    r.get("synthetic.model", syn.model);
    r.get("synthetic.T", syn.T);
    r.get("synthetic.S", syn.S);
    r.get("synthetic.C_true", syn.C_true);
    r.get("synthetic.residual_vol", syn.residual_vol);
    syn.regime.S = syn.S;
    syn.regime.C_true = syn.C_true;
    r.get("synthetic.calm_factor_vol", syn.regime.calm_factor_vol);
    r.get("synthetic.stressed_factor_vol", syn.regime.stressed_factor_vol);
    r.get("synthetic.stay_calm", syn.regime.stay_calm);
    r.get("synthetic.stay_stressed", syn.regime.stay_stressed);
    r.get("synthetic.reversion", syn.regime.reversion);
    r.get("synthetic.min_residual_vol", syn.regime.min_residual_vol);
    r.get("synthetic.max_residual_vol", syn.regime.max_residual_vol);
    syn.regime.seed = cfg.seed;
    if (syn.model != "regime" && syn.model != "factor") r.fail("synthetic.model", "expected regime or factor");
    if (syn.T < 3) r.fail("synthetic.T", "must be at least 3");
    if (syn.S < 2) r.fail("synthetic.S", "must be at least 2");
    if (syn.C_true >= syn.S) r.fail("synthetic.C_true", "must be smaller than synthetic.S");
    if (!(syn.residual_vol >= 0.0)) r.fail("synthetic.residual_vol", "must be non-negative");
    if (!(syn.regime.reversion > 0.0 && syn.regime.reversion < 1.0)) r.fail("synthetic.reversion", "must lie in (0, 1)");
    if (!(syn.regime.min_residual_vol > 0.0 && syn.regime.min_residual_vol <= syn.regime.max_residual_vol)) {
        r.fail("synthetic.min_residual_vol", "must be positive and not above synthetic.max_residual_vol");
    }

    auto& bt = cfg.backtest;
    r.get("window.H", bt.window.H);
    r.get("window.C", bt.window.C);
    if (bt.window.H < 2) r.fail("window.H", "must be at least 2");

    auto& net = bt.network;
    net.H = bt.window.H;
    net.Hp = std::min<std::size_t>(net.Hp, bt.window.H);
    r.get("network.H", net.H);
    r.get("network.psi1_hidden", net.psi1_hidden);
    r.get("network.psi2_hidden", net.psi2_hidden);
    r.get("network.K", net.K);
    r.get("network.Q", net.Q);
    r.get("network.Hp", net.Hp);
    if (r.has("network.taus") && r.has("network.n_taus")) r.fail("network.taus", "give either taus or n_taus, not both");
    std::size_t n_taus = 0;
    r.get("network.n_taus", n_taus);
    if (n_taus > 0) net.taus = nn::default_taus(n_taus);
    r.get("network.taus", net.taus);
    r.get("network.dropout_rate", net.dropout_rate);
    r.get("network.rescale_exponent", net.rescale_exponent);
    r.get("network.homogeneous", net.homogeneous);
    r.get("network.batch_norm", net.batch_norm);
    r.get("network.mlp_hidden", net.mlp_hidden);
    try {
        nn::validate(net);
    } catch (const ConfigError& e) {
        r.fail("network", e.what());
    }

    auto& tr = bt.training;
    r.get("training.epochs", tr.epochs);
    r.get("training.batch_size", tr.batch_size);
    r.get("training.learning_rate", tr.learning_rate);
    tr.seed = cfg.seed;
    if (tr.batch_size < 1) r.fail("training.batch_size", "must be positive");
    if (!(tr.learning_rate > 0.0)) r.fail("training.learning_rate", "must be positive");
    std::string train_strategy = "dpo";
    r.get("training.strategy", train_strategy);
    try {
        cfg.train_strategy = backtest::strategy_from_string(train_strategy);
        if (!backtest::uses_network(cfg.train_strategy)) r.fail("training.strategy", "strategy does not train a network");
    } catch (const ConfigError& e) {
        r.fail("training.strategy", e.what());
    }

    r.get("backtest.d", bt.d);
    r.get("backtest.periods_per_year", bt.periods_per_year);
    r.get("backtest.lambda", bt.lambda);
    r.get("backtest.train_fraction", bt.train_fraction);
    r.get("backtest.on_residuals", bt.on_residuals);
    r.get("backtest.retrain_every", bt.retrain_every);
    r.get("backtest.linear_H", bt.linear_H);
    std::string risk = "variance";
    r.get("backtest.risk", risk);
    if (risk == "mad") bt.risk = backtest::RiskInput::Mad;
    else if (risk != "variance") r.fail("backtest.risk", "expected variance or mad");
    if (!(bt.periods_per_year > 0.0)) r.fail("backtest.periods_per_year", "must be positive");
    if (!(bt.lambda > 0.0)) r.fail("backtest.lambda", "must be positive");
    if (!(bt.train_fraction >= 0.0 && bt.train_fraction < 1.0)) r.fail("backtest.train_fraction", "must lie in [0, 1)");
    std::vector<std::string> roster;
    for (auto s : backtest::all_strategies()) roster.push_back(backtest::to_string(s));
    r.get("backtest.strategies", roster);
    for (const auto& name : roster) {
        try {
            cfg.strategies.push_back(backtest::strategy_from_string(name));
        } catch (const ConfigError& e) {
            r.fail("backtest.strategies", e.what());
        }
    }

    r.get("sweep.Cs", cfg.sweep.Cs);
    r.get("stability.H", cfg.stability.H);
    r.get("stability.Cs", cfg.stability.Cs);
    r.get("stability.stride", cfg.stability.stride);
    if (cfg.stability.H == 0) cfg.stability.H = bt.window.H;

    r.get("report.input", cfg.report_input);
    if (check_paths && !cfg.report_input.empty() && !std::filesystem::exists(cfg.report_input)) {
        r.fail("report.input", fmt::format("'{}' does not exist", cfg.report_input.string()));
    }

    r.report_unknown();
    if (!r.errors.empty()) {
        throw ValidationError(fmt::format("invalid configuration:\n  {}", fmt::join(r.errors, "\n  ")));
    }
    return cfg;
}

RunConfig load(const std::optional<std::filesystem::path>& path, const Overrides& overrides, bool check_paths) {
    Table table;
    if (path) {
        if (!std::filesystem::exists(*path)) throw ValidationError(fmt::format("config file '{}' does not exist", path->string()));
        table = parse(io::read_file(*path), path->string());
    }
    for (const auto& s : overrides.set) {
        auto [key, value] = parse_override(s);
        table[key] = value;
    }
    if (overrides.seed) table["seed"] = Value{Scalar{static_cast<std::int64_t>(*overrides.seed >> 1)}, 0};
    if (overrides.out) table["out"] = Value{Scalar{overrides.out->string()}, 0};
    RunConfig cfg = resolve(table, check_paths);
    if (overrides.seed) {
        // The table only holds int64; the full u64 seed is restored here.
        cfg.seed = *overrides.seed;
        cfg.backtest.training.seed = cfg.seed;
        cfg.synthetic.regime.seed = cfg.seed;
    }
    return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
    const auto& syn = cfg.synthetic;
    nlohmann::json strategies = nlohmann::json::array();
    for (auto s : cfg.strategies) strategies.push_back(backtest::to_string(s));
    const char* layout = cfg.data.layout == CsvLayout::Long ? "long" : cfg.data.layout == CsvLayout::Wide ? "wide" : "auto";
    return {{"seed", cfg.seed},
            {"data",
             {{"source", cfg.data.source},
              {"path", cfg.data.path.generic_string()},
              {"layout", layout},
              {"date_column", cfg.data.columns.date},
              {"symbol_column", cfg.data.columns.symbol},
              {"price_column", cfg.data.columns.price},
              {"symbols", cfg.data.symbols}}},
            {"synthetic",
             {{"model", syn.model},
              {"T", syn.T},
              {"S", syn.S},
              {"C_true", syn.C_true},
              {"residual_vol", syn.residual_vol},
              {"calm_factor_vol", syn.regime.calm_factor_vol},
              {"stressed_factor_vol", syn.regime.stressed_factor_vol},
              {"stay_calm", syn.regime.stay_calm},
              {"stay_stressed", syn.regime.stay_stressed},
              {"reversion", syn.regime.reversion},
              {"min_residual_vol", syn.regime.min_residual_vol},
              {"max_residual_vol", syn.regime.max_residual_vol}}},
            {"backtest", backtest::to_json(cfg.backtest)},
            {"strategies", strategies},
            {"training_strategy", backtest::to_string(cfg.train_strategy)},
            {"sweep", {{"Cs", sizes(cfg.sweep.Cs)}}},
            {"stability", {{"H", cfg.stability.H}, {"Cs", sizes(cfg.stability.Cs)}, {"stride", cfg.stability.stride}}},
            {"report", {{"input", cfg.report_input.generic_string()}}}};
}

}  // namespace dpo::config
