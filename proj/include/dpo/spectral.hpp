#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "dpo/data_ingest.hpp"

namespace dpo::spectral {

struct WindowConfig {
    std::size_t H = 256;  // look-back length in days
    std::size_t C = 10;   // leading principal components removed
};

// V is the S x S left singular basis of the centered window, columns ordered
// by descending singular value. A = V diag(0 x C, 1 x (S - C)) V^T.
struct ResidualProjection {
    MatrixXd V;
    VectorXd singular_values;  // length S, zero padded when H < S
    MatrixXd A;
    VectorXd row_means;
    std::size_t C = 0;
    std::size_t window_end = 0;  // t: the window covers [t - H, t)
};

struct CenteredWindow {
    MatrixXd X;  // S x H, rows sum to zero
    VectorXd row_means;
};

// Asset-major window X_t = [r_{t-H}, ..., r_{t-1}].
MatrixXd window(const ReturnPanel& returns, std::size_t t, std::size_t H);
CenteredWindow center_rows(const MatrixXd& X);

ResidualProjection decompose(const MatrixXd& centered, std::size_t C);
// Builds the projection for a caller-supplied orthonormal basis.
ResidualProjection projection_from_basis(const MatrixXd& V, const VectorXd& singular_values, std::size_t C);
// window + center_rows + decompose, with row_means and window_end filled in.
ResidualProjection fit_projection(const ReturnPanel& returns, std::size_t t, const WindowConfig& cfg);

VectorXd spectral_residual(const ResidualProjection& proj, const VectorXd& r);

enum class VectorShape { Spreading, Spiked, Neither };

struct OffdiagReport {
    double max_offdiag = 0.0;
    double mean_offdiag = 0.0;
    double delta = 0.0;
    double bound = 0.0;  // C * delta / S
    std::vector<VectorShape> top_shapes;
};

// delta-spreading: |v_i| <= sqrt(delta/S) for all i.
// delta-spiked: |v_i| <= delta/S for all but one i.
VectorShape classify_vector(const VectorXd& v, double delta);
OffdiagReport offdiag_report(const ResidualProjection& proj, double delta);

// ||P_mar A_res||_F; both arguments must be symmetric idempotent.
double sin_theta(const MatrixXd& P_mar, const MatrixXd& A_res);
double davis_kahan_bound(const VectorXd& residual_vols, double lambda_min, std::size_t S);

// Population-side helpers for the factor model r = B f + eps.
MatrixXd market_projection(const MatrixXd& B);
MatrixXd population_residual_projection(const MatrixXd& B, const VectorXd& residual_vols, std::size_t C);
double smallest_positive_eigenvalue(const MatrixXd& BBt, double rel_tol = 1e-10);

// Causal rolling residuals: for every date t >= H the projection A_t is fit
// on [t - H, t) and applied to r_t. Only the removed basis V_C (S x C) is kept
// per date, so A_t x = x - V_C V_C^T x.
struct RollingResiduals {
    std::size_t H = 0;
    std::size_t C = 0;
    std::size_t first = 0;  // first date with a projection (== H)
    std::vector<std::string> dates;
    std::vector<std::string> symbols;
    MatrixXd residuals;  // T x S, rows < first are zero
    std::vector<MatrixXd> removed_basis;  // indexed by t - first
    // Per-date diagnostics.
    std::vector<double> trace;
    std::vector<double> max_offdiag;
    std::vector<VectorXd> spectrum_head;

    bool has(std::size_t t) const { return t >= first && t < static_cast<std::size_t>(residuals.rows()); }
    VectorXd apply(std::size_t t, const VectorXd& x) const;
    MatrixXd projection(std::size_t t) const;
};

RollingResiduals rolling_residuals(const ReturnPanel& returns, const WindowConfig& cfg);

struct StabilityCurve {
    std::vector<int> deltas;  // -H .. H-1
    std::vector<std::size_t> Cs;
    std::vector<std::vector<double>> ratio;  // ratio[c][k] for deltas[k]
};

// Fits A_t on [t - H, t) and applies it to both that window and the unseen
// window [t, t + H). Volatility at each offset is the cross-sectional RMS;
// ratio = (mean over t of residual vol) / (mean over t of raw vol).
StabilityCurve local_stability(const ReturnPanel& returns, std::size_t H, const std::vector<std::size_t>& Cs,
                               std::size_t stride = 0);

// Sequential reference versions of the OpenMP kernels, kept for tests and
// benchmarks. They must agree bit for bit with the parallel versions.
namespace serial {
RollingResiduals rolling_residuals(const ReturnPanel& returns, const WindowConfig& cfg);
StabilityCurve local_stability(const ReturnPanel& returns, std::size_t H, const std::vector<std::size_t>& Cs,
                               std::size_t stride = 0);
}  // namespace serial

}  // namespace dpo::spectral
