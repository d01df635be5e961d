#include "dpo/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include "dpo/errors.hpp"

namespace dpo::spectral {

namespace {

using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

double max_abs_offdiag(const MatrixXd& M, double* mean_out = nullptr) {
    const Index S = M.rows();
    double max_v = 0.0;
    double sum = 0.0;
    for (Index j = 0; j < S; ++j) {
        for (Index i = 0; i < S; ++i) {
            if (i == j) continue;
            const double a = std::abs(M(i, j));
            max_v = std::max(max_v, a);
            sum += a;
        }
    }
    if (mean_out) *mean_out = S > 1 ? sum / static_cast<double>(S * (S - 1)) : 0.0;
    return max_v;
}

void check_projection(const MatrixXd& P, const char* name) {
    if (P.rows() != P.cols()) throw ValidationError(std::string(name) + " is not square");
    const double tol = 1e-6 * std::max<double>(1.0, static_cast<double>(P.rows()));
    if ((P - P.transpose()).norm() > tol) throw ValidationError(std::string(name) + " is not symmetric");
    if ((P * P - P).norm() > tol) throw ValidationError(std::string(name) + " is not idempotent");
}

struct SvdResult {
    MatrixXd V;
    VectorXd singular_values;
};

SvdResult left_singular_basis(const MatrixXd& centered) {
    if (!centered.allFinite()) throw NumericalError("window contains non-finite values");
    const Index S = centered.rows();
    Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeFullU);
    if (svd.info() != Eigen::Success) throw NumericalError("SVD failed to converge");
    SvdResult out;
    out.V = svd.matrixU();
    out.singular_values = VectorXd::Zero(S);
    out.singular_values.head(svd.singularValues().size()) = svd.singularValues();
    return out;
}

void warn_on_tie(const VectorXd& sv, std::size_t C, std::size_t t) {
    if (C == 0 || C >= static_cast<std::size_t>(sv.size())) return;
    const double gap = sv(idx(C - 1)) - sv(idx(C));
    if (sv(0) > 0.0 && gap < 1e-10 * sv(0)) {
        spdlog::warn("window ending at {}: singular values {} and {} are tied; keeping SVD order", t, C, C + 1);
    }
}

struct WindowResult {
    MatrixXd basis;
    VectorXd residual;
    double trace = 0.0;
    double max_offdiag = 0.0;
    VectorXd head;
};

WindowResult fit_window(const ReturnPanel& returns, std::size_t t, const WindowConfig& cfg) {
    const auto centered = center_rows(window(returns, t, cfg.H));
    const auto svd = left_singular_basis(centered.X);
    warn_on_tie(svd.singular_values, cfg.C, t);
    const Index S = centered.X.rows();
    const Index C = idx(cfg.C);

    WindowResult out;
    out.basis = svd.V.leftCols(C);
    const VectorXd r = returns.returns.row(idx(t)).transpose();
    // C = 0 leaves the vector untouched bit for bit.
    out.residual = C == 0 ? r : VectorXd(r - out.basis * (out.basis.transpose() * r));
    const MatrixXd A = MatrixXd::Identity(S, S) - out.basis * out.basis.transpose();
    out.trace = A.trace();
    out.max_offdiag = C == 0 ? 0.0 : max_abs_offdiag(A);
    out.head = svd.singular_values.head(std::min<Index>(5, S));
    return out;
}

RollingResiduals prepare_rolling(const ReturnPanel& returns, const WindowConfig& cfg) {
    const std::size_t T = returns.num_dates();
    const std::size_t S = returns.num_assets();
    if (cfg.H < 2) throw WindowError("rolling window needs H >= 2");
    if (cfg.C >= S) throw ConfigError("C must be smaller than the asset count");
    if (T <= cfg.H) throw WindowError("return panel shorter than window plus one date");
    RollingResiduals out;
    out.H = cfg.H;
    out.C = cfg.C;
    out.first = cfg.H;
    out.dates = returns.dates;
    out.symbols = returns.symbols;
    out.residuals = MatrixXd::Zero(idx(T), idx(S));
    const std::size_t n = T - cfg.H;
    out.removed_basis.resize(n);
    out.trace.resize(n);
    out.max_offdiag.resize(n);
    out.spectrum_head.resize(n);
    return out;
}

void store(RollingResiduals& out, std::size_t t, WindowResult&& w) {
    const std::size_t k = t - out.first;
    out.residuals.row(idx(t)) = w.residual.transpose();
    out.removed_basis[k] = std::move(w.basis);
    out.trace[k] = w.trace;
    out.max_offdiag[k] = w.max_offdiag;
    out.spectrum_head[k] = std::move(w.head);
}

// Per-t contributions to the stability curve: raw and residual RMS per offset.
struct StabilitySlice {
    std::vector<double> raw;                // 2H
    std::vector<std::vector<double>> res;   // |Cs| x 2H
};

StabilitySlice stability_slice(const ReturnPanel& returns, std::size_t t, std::size_t H,
                               const std::vector<std::size_t>& Cs) {
    const auto centered = center_rows(window(returns, t, H));
    const auto svd = left_singular_basis(centered.X);
    const Index S = centered.X.rows();
    StabilitySlice slice;
    slice.raw.assign(2 * H, 0.0);
    slice.res.assign(Cs.size(), std::vector<double>(2 * H, 0.0));
    for (std::size_t k = 0; k < 2 * H; ++k) {
        const VectorXd r = returns.returns.row(idx(t - H + k)).transpose();
        slice.raw[k] = std::sqrt(r.squaredNorm() / static_cast<double>(S));
    }
    for (std::size_t c = 0; c < Cs.size(); ++c) {
        const MatrixXd basis = svd.V.leftCols(idx(Cs[c]));
        for (std::size_t k = 0; k < 2 * H; ++k) {
            if (Cs[c] == 0) {
                slice.res[c][k] = slice.raw[k];
                continue;
            }
            const VectorXd r = returns.returns.row(idx(t - H + k)).transpose();
            const VectorXd e = r - basis * (basis.transpose() * r);
            slice.res[c][k] = std::sqrt(e.squaredNorm() / static_cast<double>(S));
        }
    }
    return slice;
}

std::vector<std::size_t> stability_dates(const ReturnPanel& returns, std::size_t H,
                                         const std::vector<std::size_t>& Cs, std::size_t& stride) {
    const std::size_t T = returns.num_dates();
    if (H < 2) throw WindowError("stability window needs H >= 2");
    if (T < 2 * H + 1) throw WindowError("local_stability needs at least 2H + 1 dates");
    for (auto c : Cs) {
        if (c >= returns.num_assets()) throw ConfigError("C must be smaller than the asset count");
    }
    if (stride == 0) stride = std::max<std::size_t>(1, H / 4);
    std::vector<std::size_t> ts;
    for (std::size_t t = H; t + H <= T; t += stride) ts.push_back(t);
    return ts;
}

StabilityCurve reduce_stability(const std::vector<StabilitySlice>& slices, std::size_t H,
                                const std::vector<std::size_t>& Cs) {
    StabilityCurve curve;
    curve.Cs = Cs;
    for (std::size_t k = 0; k < 2 * H; ++k) curve.deltas.push_back(static_cast<int>(k) - static_cast<int>(H));
    std::vector<double> raw(2 * H, 0.0);
    std::vector<std::vector<double>> res(Cs.size(), std::vector<double>(2 * H, 0.0));
    for (const auto& s : slices) {
        for (std::size_t k = 0; k < 2 * H; ++k) {
            raw[k] += s.raw[k];
            for (std::size_t c = 0; c < Cs.size(); ++c) res[c][k] += s.res[c][k];
        }
    }
    curve.ratio.assign(Cs.size(), std::vector<double>(2 * H, 0.0));
    for (std::size_t c = 0; c < Cs.size(); ++c) {
        for (std::size_t k = 0; k < 2 * H; ++k) {
            curve.ratio[c][k] = raw[k] > 0.0 ? res[c][k] / raw[k] : (Cs[c] == 0 ? 1.0 : 0.0);
        }
    }
    return curve;
}

}  // namespace

MatrixXd window(const ReturnPanel& returns, std::size_t t, std::size_t H) {
    if (H < 1) throw WindowError("window length must be positive");
    if (t < H) throw WindowError("insufficient history: window needs t >= H");
    if (t > returns.num_dates()) throw WindowError("window end beyond panel");
    return returns.returns.middleRows(idx(t - H), idx(H)).transpose();
}

CenteredWindow center_rows(const MatrixXd& X) {
    if (X.cols() < 2) throw WindowError("degenerate window: centering needs H >= 2");
    CenteredWindow out;
    out.row_means = X.rowwise().mean();
    out.X = X.colwise() - out.row_means;
    return out;
}

ResidualProjection projection_from_basis(const MatrixXd& V, const VectorXd& singular_values, std::size_t C) {
    const Index S = V.rows();
    if (V.cols() != S) throw ShapeError("basis must be square");
    if (C >= static_cast<std::size_t>(S)) throw ConfigError("C must be smaller than the asset count");
    ResidualProjection proj;
    proj.V = V;
    proj.singular_values = singular_values;
    proj.C = C;
    if (C == 0) {
        proj.A = MatrixXd::Identity(S, S);
    } else {
        const auto kept = V.rightCols(S - idx(C));
        proj.A = kept * kept.transpose();
    }
    return proj;
}

ResidualProjection decompose(const MatrixXd& centered, std::size_t C) {
    if (C >= static_cast<std::size_t>(centered.rows())) throw ConfigError("C must be smaller than the asset count");
    const auto svd = left_singular_basis(centered);
    warn_on_tie(svd.singular_values, C, 0);
    auto proj = projection_from_basis(svd.V, svd.singular_values, C);
    proj.row_means = VectorXd::Zero(centered.rows());
    return proj;
}

ResidualProjection fit_projection(const ReturnPanel& returns, std::size_t t, const WindowConfig& cfg) {
    const auto centered = center_rows(window(returns, t, cfg.H));
    auto proj = decompose(centered.X, cfg.C);
    proj.row_means = centered.row_means;
    proj.window_end = t;
    return proj;
}

VectorXd spectral_residual(const ResidualProjection& proj, const VectorXd& r) {
    if (r.size() != proj.A.rows()) throw ShapeError("return vector does not match projection size");
    return proj.A * r;
}

VectorShape classify_vector(const VectorXd& v, double delta) {
    const double S = static_cast<double>(v.size());
    const VectorXd a = v.cwiseAbs();
    if (a.maxCoeff() <= std::sqrt(delta / S)) return VectorShape::Spreading;
    Index top = 0;
    a.maxCoeff(&top);
    for (Index i = 0; i < a.size(); ++i) {
        if (i != top && a(i) > delta / S) return VectorShape::Neither;
    }
    return VectorShape::Spiked;
}

OffdiagReport offdiag_report(const ResidualProjection& proj, double delta) {
    OffdiagReport rep;
    const Index S = proj.A.rows();
    rep.delta = delta;
    rep.bound = static_cast<double>(proj.C) * delta / static_cast<double>(S);
    if (proj.C == 0) return rep;
    rep.max_offdiag = max_abs_offdiag(proj.A, &rep.mean_offdiag);
    for (std::size_t k = 0; k < proj.C; ++k) rep.top_shapes.push_back(classify_vector(proj.V.col(idx(k)), delta));
    return rep;
}

double sin_theta(const MatrixXd& P_mar, const MatrixXd& A_res) {
    check_projection(P_mar, "P_mar");
    check_projection(A_res, "A_res");
    if (P_mar.rows() != A_res.rows()) throw ShapeError("projection sizes differ");
    return (P_mar * A_res).norm();
}

double davis_kahan_bound(const VectorXd& residual_vols, double lambda_min, std::size_t S) {
    if (!(lambda_min > 0.0)) throw DomainError("lambda_min must be positive");
    const VectorXd var = residual_vols.array().square();
    return 2.0 * std::sqrt(static_cast<double>(S)) * (var.maxCoeff() - var.minCoeff()) / lambda_min;
}

MatrixXd market_projection(const MatrixXd& B) {
    const Index S = B.rows();
    Eigen::HouseholderQR<MatrixXd> qr(B);
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(S, B.cols());
    return Q * Q.transpose();
}

MatrixXd population_residual_projection(const MatrixXd& B, const VectorXd& residual_vols, std::size_t C) {
    const Index S = B.rows();
    if (C >= static_cast<std::size_t>(S)) throw ConfigError("C must be smaller than the asset count");
    MatrixXd sigma = B * B.transpose();
    sigma.diagonal() += residual_vols.array().square().matrix();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sigma);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    // Ascending order: the first S - C eigenvectors span the residual space.
    const auto kept = eig.eigenvectors().leftCols(S - idx(C));
    return kept * kept.transpose();
}

double smallest_positive_eigenvalue(const MatrixXd& BBt, double rel_tol) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(BBt, Eigen::EigenvaluesOnly);
    const VectorXd ev = eig.eigenvalues();
    const double cutoff = rel_tol * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    double best = 0.0;
    for (Index i = 0; i < ev.size(); ++i) {
        if (ev(i) > cutoff && (best == 0.0 || ev(i) < best)) best = ev(i);
    }
    return best;
}

VectorXd RollingResiduals::apply(std::size_t t, const VectorXd& x) const {
    if (!has(t)) throw WindowError("no projection for requested date");
    const auto& basis = removed_basis[t - first];
    if (x.size() != basis.rows()) throw ShapeError("vector does not match asset count");
    if (C == 0) return x;
    return x - basis * (basis.transpose() * x);
}

MatrixXd RollingResiduals::projection(std::size_t t) const {
    if (!has(t)) throw WindowError("no projection for requested date");
    const auto& basis = removed_basis[t - first];
    return MatrixXd::Identity(basis.rows(), basis.rows()) - basis * basis.transpose();
}

RollingResiduals rolling_residuals(const ReturnPanel& returns, const WindowConfig& cfg) {
    auto out = prepare_rolling(returns, cfg);
    const auto n = static_cast<std::ptrdiff_t>(out.removed_basis.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const std::size_t t = out.first + static_cast<std::size_t>(k);
        store(out, t, fit_window(returns, t, cfg));
    }
    return out;
}

StabilityCurve local_stability(const ReturnPanel& returns, std::size_t H, const std::vector<std::size_t>& Cs,
                               std::size_t stride) {
    const auto ts = stability_dates(returns, H, Cs, stride);
    std::vector<StabilitySlice> slices(ts.size());
    const auto n = static_cast<std::ptrdiff_t>(ts.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        slices[static_cast<std::size_t>(k)] = stability_slice(returns, ts[static_cast<std::size_t>(k)], H, Cs);
    }
    return reduce_stability(slices, H, Cs);
}

namespace serial {

RollingResiduals rolling_residuals(const ReturnPanel& returns, const WindowConfig& cfg) {
    auto out = prepare_rolling(returns, cfg);
    for (std::size_t t = out.first; t < returns.num_dates(); ++t) store(out, t, fit_window(returns, t, cfg));
    return out;
}

StabilityCurve local_stability(const ReturnPanel& returns, std::size_t H, const std::vector<std::size_t>& Cs,
                               std::size_t stride) {
    const auto ts = stability_dates(returns, H, Cs, stride);
    std::vector<StabilitySlice> slices;
    slices.reserve(ts.size());
    for (auto t : ts) slices.push_back(stability_slice(returns, t, H, Cs));
    return reduce_stability(slices, H, Cs);
}

}  // namespace serial

}  // namespace dpo::spectral
