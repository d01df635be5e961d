#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "dpo/data_ingest.hpp"
#include "dpo/io.hpp"

namespace testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    }
    return m;
}

inline dpo::ReturnPanel panel_from(const MatrixXd& returns) {
    dpo::ReturnPanel p;
    p.returns = returns;
    p.dates = dpo::synthetic_dates(static_cast<std::size_t>(returns.rows()));
    p.symbols = dpo::synthetic_symbols(static_cast<std::size_t>(returns.cols()));
    return p;
}

// Creates a fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("dpo_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::filesystem::path write_text(const std::filesystem::path& path, const std::string& text) {
    dpo::io::write_file_atomic(path, text);
    return path;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace testing
