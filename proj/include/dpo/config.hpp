#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dpo/backtest.hpp"
#include "dpo/data_ingest.hpp"

namespace dpo::config {

// Values of the key/value config language: scalars and flat arrays.
using Scalar = std::variant<bool, std::int64_t, double, std::string>;
struct Value {
    std::variant<Scalar, std::vector<Scalar>> v;
    int line = 0;
};

// Flattened "section.key" -> value.
using Table = std::map<std::string, Value>;

// Parses a TOML-style document: [section] headers, key = value lines, '#'
// comments, strings in double quotes, numbers, true/false and [a, b] arrays.
Table parse(const std::string& text, const std::string& origin = "<config>");
// Parses one override "section.key=value"; unquoted text is a string.
std::pair<std::string, Value> parse_override(const std::string& assignment);

struct DataConfig {
    std::string source = "synthetic";  // synthetic | file
    std::filesystem::path path;
    CsvLayout layout = CsvLayout::Auto;
    ColumnMap columns;
    std::vector<std::string> symbols;
};

struct SyntheticConfig {
    std::string model = "regime";  // regime | factor
    std::size_t T = 1500;
    RegimeMarketSpec regime;
    std::size_t S = 40;            // factor model
    std::size_t C_true = 3;
    double residual_vol = 0.1;
};

struct SweepConfig {
    std::vector<std::size_t> Cs{0, 1, 2, 3, 5, 10};
};

struct StabilityConfig {
    std::size_t H = 0;  // 0 means window.H
    std::vector<std::size_t> Cs{0, 1, 3, 10};
    std::size_t stride = 0;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";
    DataConfig data;
    SyntheticConfig synthetic;
    backtest::BacktestConfig backtest;
    std::vector<backtest::Strategy> strategies;
    backtest::Strategy train_strategy = backtest::Strategy::Dpo;
    SweepConfig sweep;
    StabilityConfig stability;
    std::filesystem::path report_input;
};

struct Overrides {
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> set;
};

// Builds a RunConfig from a table. Every unknown key, mistyped value, bad
// range and missing required key is collected; a non-empty list raises
// ValidationError naming all of them.
RunConfig resolve(const Table& table, bool check_paths = true);
RunConfig load(const std::optional<std::filesystem::path>& path, const Overrides& overrides, bool check_paths = true);

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace dpo::config
