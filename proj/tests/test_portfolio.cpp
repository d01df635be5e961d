#include <doctest.h>

#include <cmath>

#include "dpo/errors.hpp"
#include "dpo/portfolio.hpp"
#include "helpers.hpp"

using namespace dpo;
using namespace dpo::portfolio;

namespace {

// Straight-line reference for the performance measures.
struct RefMetrics {
    long double cw = 1, ar = 0, avol = 0, mdd = 0, ddr_den = 0;
};

RefMetrics reference(const VectorXd& R, double ty) {
    RefMetrics m;
    const long double n = R.size();
    long double sum = 0, sq = 0, down = 0, peak = -1;
    for (Eigen::Index t = 0; t < R.size(); ++t) {
        m.cw *= 1.0L + R(t);
        sum += R(t);
        sq += static_cast<long double>(R(t)) * R(t);
        if (R(t) < 0) down += static_cast<long double>(R(t)) * R(t);
        peak = std::max(peak, m.cw);
        m.mdd = std::max(m.mdd, (peak - m.cw) / peak);
    }
    m.ar = ty / n * sum;
    m.avol = std::sqrt(ty / n * sq);
    m.ddr_den = std::sqrt(ty / n * down);
    return m;
}

}  // namespace

TEST_CASE("metrics hand examples") {
    VectorXd R(2);
    R << 0.1, -0.1;
    const auto m = metrics(R);
    CHECK(m.CW == doctest::Approx(0.99));
    CHECK(m.AR == doctest::Approx(0.0));
    CHECK(m.AVOL == doctest::Approx(std::sqrt(126 * 0.02)));
    CHECK(m.MDD == doctest::Approx(0.1));
    REQUIRE(m.CR.has_value());
    CHECK(*m.CR == doctest::Approx(0.0));
    CHECK(m.periods == 2);

    const auto flat = metrics(VectorXd::Constant(252, 0.01));
    CHECK(flat.AR == doctest::Approx(2.52));
    CHECK(flat.AVOL == doctest::Approx(std::sqrt(252 * 1e-4)));
    CHECK(*flat.ASR == doctest::Approx(2.52 / std::sqrt(252 * 1e-4)));
    CHECK(flat.MDD == 0.0);
    CHECK_FALSE(flat.CR.has_value());
    CHECK_FALSE(flat.DDR.has_value());

    const auto zero = metrics(VectorXd::Zero(5));
    CHECK_FALSE(zero.ASR.has_value());
    CHECK(zero.CW == 1.0);
    const auto j = to_json(zero);
    CHECK(j["ASR"].is_null());
    CHECK(j["CW"] == 1.0);

    // The first period's drop counts against the first peak, not CW_0 = 1.
    VectorXd first_loss(2);
    first_loss << -0.5, 0.2;
    CHECK(metrics(first_loss).MDD == 0.0);

    CHECK_THROWS_AS(metrics(VectorXd()), DataError);
}

TEST_CASE("metrics agree with the reference on random series") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = std::uniform_int_distribution<int>(1, 300)(rng);
        const VectorXd R = testing::gaussian(n, 1, rng, std::uniform_real_distribution<double>(0.001, 0.05)(rng));
        const auto m = metrics(R, 252);
        const auto ref = reference(R, 252);
        CHECK(testing::rel_err(m.CW, double(ref.cw)) <= 1e-10);
        CHECK(testing::rel_err(m.AR, double(ref.ar)) <= 1e-10);
        CHECK(testing::rel_err(m.AVOL, double(ref.avol)) <= 1e-10);
        CHECK(testing::rel_err(m.MDD, double(ref.mdd)) <= 1e-10);
        if (m.ASR) CHECK(testing::rel_err(*m.ASR, double(ref.ar / ref.avol)) <= 1e-9);
        if (m.DDR) CHECK(testing::rel_err(*m.DDR, double(ref.ar / ref.ddr_den)) <= 1e-9);
        CHECK(m.MDD >= 0.0);
        CHECK(m.MDD < 1.0);
        // Cauchy-Schwarz caps the annualized Sharpe ratio at sqrt(T_Y).
        if (m.ASR) CHECK(std::abs(*m.ASR) <= std::sqrt(252.0) + 1e-9);
        if (m.ASR) CHECK(std::abs(*m.ASR * m.AVOL - m.AR) <= 1e-12 * std::max(1.0, std::abs(m.AR)));
        if (m.CR) CHECK(std::abs(*m.CR * m.MDD - m.AR) <= 1e-12 * std::max(1.0, std::abs(m.AR)));
        if (m.AR >= 0 && m.ASR && m.DDR) CHECK(*m.DDR >= *m.ASR - 1e-12);
        // Scaling returns leaves the Sharpe ratio unchanged.
        const auto scaled = metrics(0.5 * R, 252);
        if (m.ASR && scaled.ASR) CHECK(testing::rel_err(*m.ASR, *scaled.ASR) <= 1e-12);
    }
}

TEST_CASE("zero-investment normalization") {
    VectorXd b(3);
    b << 1, 2, 3;
    const auto p = normalize_zero_investment(b, 4, "d4");
    CHECK(p.weights(0) == doctest::Approx(-0.5));
    CHECK(p.weights(1) == doctest::Approx(0.0));
    CHECK(p.weights(2) == doctest::Approx(0.5));
    CHECK(p.t == 4);
    CHECK_FALSE(p.degenerate);

    const auto flat = normalize_zero_investment(VectorXd::Constant(3, 7.0));
    CHECK(flat.degenerate);
    CHECK(flat.weights.isZero(0.0));
    VectorXd bad(2);
    bad << 1.0, std::nan("");
    CHECK(normalize_zero_investment(bad).degenerate);

    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        const auto q = normalize_zero_investment(testing::gaussian(17, 1, rng, 5.0));
        CHECK(std::abs(q.weights.sum()) <= 1e-12);
        CHECK(std::abs(q.weights.lpNorm<1>() - 1.0) <= 1e-12);
        // Invariant to shifts and positive scaling of the raw signal.
        const auto q2 = normalize_zero_investment((3.0 * q.weights.array() + 11.0).matrix());
        CHECK((q2.weights - q.weights).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("residual weights") {
    VectorXd mu(2), var(2);
    mu << 0.01, -0.02;
    var << 1e-4, 0.0;
    const VectorXd b = residual_weights(mu, var);
    CHECK(b(0) == doctest::Approx(100.0));
    CHECK(b(1) == doctest::Approx(-0.02 / kVarianceFloor));
    CHECK((residual_weights(mu, var, 2.0) - 0.5 * b).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(residual_weights(mu, var, 0.0), DomainError);
    CHECK_THROWS_AS(residual_weights(mu, VectorXd::Ones(3)), ShapeError);
}

TEST_CASE("realized returns use the return d periods after the decision") {
    std::mt19937_64 rng(3);
    const auto panel = testing::panel_from(testing::gaussian(10, 3, rng, 0.01));
    std::vector<Portfolio> ports;
    for (std::size_t t = 2; t < 10; ++t) ports.push_back(normalize_zero_investment(testing::gaussian(3, 1, rng), t));
    const auto one = realized_returns(ports, panel, 1);
    const auto two = realized_returns(ports, panel, 2);
    CHECK(one.values.size() == 7);
    CHECK(two.values.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& p = ports[k];
        CHECK(one.values(static_cast<Eigen::Index>(k)) == p.weights.dot(panel.returns.row(static_cast<Eigen::Index>(p.t + 1)).transpose()));
        CHECK(two.values(static_cast<Eigen::Index>(k)) == p.weights.dot(panel.returns.row(static_cast<Eigen::Index>(p.t + 2)).transpose()));
    }
    CHECK(one.t.front() == 2);
    CHECK_THROWS_AS(realized_returns({ports.back()}, panel, 1), ConfigError);
    // A zero row at the head with one more period of delay changes nothing.
    ReturnPanel padded = panel;
    padded.returns.resize(11, 3);
    padded.returns.row(0).setZero();
    padded.returns.bottomRows(10) = panel.returns;
    padded.dates.insert(padded.dates.begin(), "d_pad");
    CHECK(realized_returns(ports, padded, 2).values == one.values);
    CHECK(realized_returns(ports, padded, 3).values == two.values);
    CHECK(cumulative_wealth(one.values)(6) == doctest::Approx(metrics(one.values).CW));
}

TEST_CASE("market and reversal baselines") {
    const auto mkt = baseline_market(4, {3, 4});
    CHECK(mkt.size() == 2);
    CHECK(mkt[0].weights == VectorXd::Constant(4, 0.25));
    CHECK_FALSE(mkt[0].degenerate);

    VectorXd prev(3);
    prev << 1, 2, 3;
    VectorXd want(3);
    want << 1, 0, -1;
    CHECK(ar1_signal(prev) == want);
    MatrixXd series(2, 3);
    series.row(0) = prev.transpose();
    series.row(1).setZero();
    const auto ar = baseline_ar1(series, {1});
    CHECK(ar[0].weights(0) == doctest::Approx(0.5));
    CHECK(ar[0].weights(2) == doctest::Approx(-0.5));
    CHECK(baseline_ar1(series, {2})[0].degenerate);
    CHECK_THROWS_AS(baseline_ar1(series, {0}), WindowError);
}

TEST_CASE("linear baseline recovers autoregressive coefficients") {
    std::mt19937_64 rng(4);
    // Noise-free AR(1) with H = 1 pins the coefficient exactly.
    MatrixXd exact(50, 5);
    exact.row(0) = testing::gaussian(1, 5, rng);
    for (Eigen::Index t = 1; t < 50; ++t) exact.row(t) = 0.5 * exact.row(t - 1);
    const auto m1 = fit_linear(exact, 1, 0, 30);
    CHECK(m1.coef(0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK_FALSE(m1.ridge);

    MatrixXd noisy(5000, 10);
    noisy.topRows(2) = testing::gaussian(2, 10, rng);
    const MatrixXd eps = testing::gaussian(5000, 10, rng);
    for (Eigen::Index t = 2; t < 5000; ++t) noisy.row(t) = 0.3 * noisy.row(t - 1) - 0.2 * noisy.row(t - 2) + eps.row(t);
    const auto m2 = fit_linear(noisy, 2, 0, 5000);
    // coef[k] multiplies x_{t-H+k}: oldest lag first.
    CHECK(m2.coef(1) == doctest::Approx(0.3).epsilon(0.1));
    CHECK(m2.coef(0) == doctest::Approx(-0.2).epsilon(0.1));

    const auto degenerate = fit_linear(MatrixXd::Zero(40, 3), 4, 0, 40);
    CHECK(degenerate.ridge);
    CHECK(degenerate.coef.isZero(0.0));
    CHECK_THROWS_AS(fit_linear(noisy, 2, 0, 2), ConfigError);

    const auto ports = baseline_linear(exact, m1, {10, 20});
    CHECK(ports.size() == 2);
    CHECK(std::abs(ports[0].weights.sum()) <= 1e-12);
}

TEST_CASE("mapping residual weights back to assets uses the projection") {
    std::mt19937_64 rng(5);
    const auto panel = testing::panel_from(testing::gaussian(50, 6, rng, 0.01));
    const auto proj = spectral::fit_projection(panel, 40, {40, 2});
    const VectorXd b = testing::gaussian(6, 1, rng);
    CHECK((map_to_assets(proj, b) - proj.A.transpose() * b).cwiseAbs().maxCoeff() <= 1e-15);
    // Mapped weights carry no exposure to the removed components.
    CHECK((proj.V.leftCols(2).transpose() * map_to_assets(proj, b)).cwiseAbs().maxCoeff() <= 1e-10);
}
