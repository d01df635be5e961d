#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "dpo/errors.hpp"
#include "dpo/nn.hpp"
#include "helpers.hpp"

using namespace dpo;
using namespace dpo::nn;

namespace {

// Loss used by the gradient checks: L = sum(W .* f(x)).
struct Probe {
    MatrixXd W;
    double operator()(const MatrixXd& out) const { return W.cwiseProduct(out).sum(); }
};

void zero_grads(Module& m) {
    std::vector<Param*> ps;
    m.parameters(ps);
    for (auto* p : ps) p->grad.setZero(p->value.rows(), p->value.cols());
}

// Compares analytic input and parameter gradients with central differences.
// `fresh_ctx` rebuilds the context so stochastic layers replay the same mask.
void check_gradients(Module& m, const MatrixXd& x, std::function<Context()> fresh_ctx, std::mt19937_64& rng,
                     double tol = 1e-4) {
    Context ctx = fresh_ctx();
    const MatrixXd out = m.forward(x, ctx);
    Probe probe{testing::gaussian(out.rows(), out.cols(), rng)};
    zero_grads(m);
    const MatrixXd gx = m.backward(probe.W);

    const double h = 1e-5;
    auto eval = [&] {
        Context c = fresh_ctx();
        return probe(m.forward(x, c));
    };
    MatrixXd xp = x;
    auto eval_at = [&](const MatrixXd& input) {
        Context c = fresh_ctx();
        return probe(m.forward(input, c));
    };
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = xp(i);
        xp(i) = keep + h;
        const double up = eval_at(xp);
        xp(i) = keep - h;
        const double down = eval_at(xp);
        xp(i) = keep;
        worst = std::max(worst, testing::rel_err((up - down) / (2 * h), gx(i)));
    }
    CHECK(worst <= tol);

    std::vector<Param*> ps;
    m.parameters(ps);
    std::vector<MatrixXd> analytic;
    for (auto* p : ps) analytic.push_back(p->grad);
    worst = 0.0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
        if (!ps[k]->trainable) continue;
        for (Eigen::Index i = 0; i < ps[k]->value.size(); ++i) {
            const double keep = ps[k]->value(i);
            ps[k]->value(i) = keep + h;
            const double up = eval();
            ps[k]->value(i) = keep - h;
            const double down = eval();
            ps[k]->value(i) = keep;
            worst = std::max(worst, testing::rel_err((up - down) / (2 * h), analytic[k](i)));
        }
    }
    CHECK(worst <= tol);
}

Context eval_ctx() { return Context{Mode::Eval, nullptr}; }

NetworkSpec small_spec() {
    NetworkSpec s;
    s.H = 12;
    s.Hp = 4;
    s.taus = {1.0, 0.6, 0.35};
    s.psi1_hidden = {6};
    s.K = 5;
    s.psi2_hidden = {6};
    s.Q = 4;
    s.dropout_rate = 0.0;
    return s;
}

// Reference for resample: the cumulative path as a continuous piecewise
// linear function of position, evaluated directly from the increments.
double path_at(const VectorXd& x, double s) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) total += x(j) * std::clamp(s - static_cast<double>(j), 0.0, 1.0);
    return total;
}

VectorXd resample_oracle(const VectorXd& x, double tau, std::size_t Hp, double e) {
    const auto H = static_cast<double>(x.size());
    const double m = std::min(std::floor((1.0 - tau) * H), H - 1.0);
    VectorXd out(static_cast<Eigen::Index>(Hp));
    for (std::size_t k = 0; k < Hp; ++k) {
        const double a = m + static_cast<double>(k) * (H - m) / static_cast<double>(Hp);
        const double b = m + static_cast<double>(k + 1) * (H - m) / static_cast<double>(Hp);
        out(static_cast<Eigen::Index>(k)) = (path_at(x, b) - path_at(x, a)) / std::pow(tau, e);
    }
    return out;
}

}  // namespace

TEST_CASE("pinball loss examples") {
    CHECK(pinball_loss(1.0, 0.0, 0.1) == doctest::Approx(0.1));
    CHECK(pinball_loss(0.0, 1.0, 0.1) == doctest::Approx(0.9));
    CHECK(pinball_loss(2.0, 2.0, 0.3) == 0.0);
    CHECK(pinball_grad(2.0, 2.0, 0.3) == -0.3);
    CHECK(pinball_grad(0.0, 1.0, 0.3) == doctest::Approx(0.7));
    CHECK(pinball_grad(1.0, 0.0, 0.3) == -0.3);
    CHECK_THROWS_AS(pinball_loss(0.0, 0.0, 1.0), DomainError);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3, 3), a(0.01, 0.99), w(0, 1);
    for (int i = 0; i < 500; ++i) {
        const double y = u(rng), p = u(rng), q = u(rng), alpha = a(rng), lam = w(rng);
        CHECK(pinball_loss(y, p, alpha) >= 0.0);
        CHECK(pinball_loss(y, lam * p + (1 - lam) * q, alpha) <=
              lam * pinball_loss(y, p, alpha) + (1 - lam) * pinball_loss(y, q, alpha) + 1e-12);
    }
}

TEST_CASE("multi-quantile loss with four levels") {
    CHECK(quantile_levels(4) == std::vector<double>{0.25, 0.5, 0.75});
    VectorXd p(3);
    p << -1, 0, 1;
    CHECK(multi_quantile_loss(0.0, p) == doctest::Approx(0.5));
    CHECK(multi_quantile_loss(0.0, VectorXd::Zero(3)) == 0.0);

    MatrixXd P(3, 2);
    P.col(0) = p;
    P.col(1) = VectorXd::Zero(3);
    const auto r = multi_quantile_loss(P, VectorXd::Zero(2));
    CHECK(r.value == doctest::Approx(0.25));
    CHECK(r.grad(0, 0) == doctest::Approx(-0.25 / 2));
    CHECK(r.grad(2, 0) == doctest::Approx(0.25 / 2));
    CHECK_THROWS_AS(multi_quantile_loss(P, VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("pinball minimizer over a grid is the empirical quantile") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> y(1001);
    for (auto& v : y) v = n(rng);
    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    for (double alpha : {0.1, 0.25, 0.5, 0.9}) {
        double best = 1e300, arg = 0;
        for (int g = -4000; g <= 4000; ++g) {
            const double c = g * 1e-3;
            double total = 0;
            for (double v : y) total += pinball_loss(v, c, alpha);
            if (total < best) best = total, arg = c;
        }
        // Any point between the order statistics around alpha * n minimizes.
        const auto k = static_cast<std::size_t>(std::ceil(alpha * 1001.0)) - 1;
        const double lo = sorted[k > 0 ? k - 1 : 0], hi = sorted[k];
        CHECK(arg >= lo - 1e-3);
        CHECK(arg <= hi + 1e-3);
    }
}

TEST_CASE("resample identity, linearity and reference values") {
    std::mt19937_64 rng(3);
    const VectorXd x = testing::gaussian(16, 1, rng);
    CHECK((resample(x, 1.0, 16, 0.5) - x).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(default_taus().size() == 22);
    CHECK(default_taus().front() == 1.0);
    CHECK(default_taus().back() == doctest::Approx(std::pow(4.0, -21.0 / 20.0)));

    const VectorXd y = testing::gaussian(16, 1, rng);
    const VectorXd lhs = resample(2.0 * x - 0.5 * y, 0.4, 5, 0.5);
    const VectorXd rhs = 2.0 * resample(x, 0.4, 5, 0.5) - 0.5 * resample(y, 0.4, 5, 0.5);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);

    std::uniform_int_distribution<int> Hd(2, 300);
    std::uniform_real_distribution<double> td(0.01, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto H = static_cast<std::size_t>(Hd(rng));
        const auto Hp = static_cast<std::size_t>(std::uniform_int_distribution<int>(2, static_cast<int>(std::max<std::size_t>(2, H)))(rng));
        const double tau = trial == 0 ? 1.0 : td(rng);
        const VectorXd v = testing::gaussian(static_cast<Eigen::Index>(H), 1, rng);
        const VectorXd got = resample(v, tau, Hp, 0.5);
        const VectorXd want = resample_oracle(v, tau, Hp, 0.5);
        CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, want.cwiseAbs().maxCoeff()));
        const MatrixXd M = resample_matrix(H, tau, Hp, 0.5);
        CHECK((M * v - got).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, got.cwiseAbs().maxCoeff()));
    }
    CHECK_THROWS_AS(resample(x, 0.0, 4, 0.5), DomainError);
    CHECK_THROWS_AS(resample(x, 0.5, 1, 0.5), ConfigError);
}

TEST_CASE("homogenize is positively homogeneous") {
    std::mt19937_64 rng(4);
    auto dense = std::make_unique<Dense>(3, 2, rng, 1.0, "d");
    dense->bias.value << 0.5, -0.25;
    const MatrixXd W = dense->weight.value;
    const VectorXd b = dense->bias.value;
    Homogenize h(std::move(dense));
    CHECK(h.infer(MatrixXd::Zero(3, 1)).isZero(0.0));
    const VectorXd x = testing::gaussian(3, 1, rng);
    // With a linear core psi(x) = W x + ||x|| b.
    CHECK((h.infer(x) - (W * x + x.norm() * b)).cwiseAbs().maxCoeff() <= 1e-12);
    for (double c : {0.5, 3.0, 10.0}) {
        CHECK((h.infer(c * x) - c * h.infer(x)).cwiseAbs().maxCoeff() <= 1e-10);
    }
    const VectorXd neg = h.infer(-x);
    CHECK((neg - (-W * x + x.norm() * b)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("fractal network with linear parts matches the matrix composition") {
    std::mt19937_64 rng(5);
    const std::vector<double> taus{1.0, 0.5, 0.25};
    auto psi1 = make_mlp({8, {}, 3, 0.0, false}, rng, "psi1");
    auto psi2 = make_mlp({3, {}, 2, 0.0, false}, rng, "psi2");
    auto& d1 = dynamic_cast<Dense&>(psi1.layer(0));
    auto& d2 = dynamic_cast<Dense&>(psi2.layer(0));
    d1.bias.value = testing::gaussian(3, 1, rng);
    d2.bias.value = testing::gaussian(2, 1, rng);
    const MatrixXd W1 = d1.weight.value, W2 = d2.weight.value;
    const VectorXd b1 = d1.bias.value, b2 = d2.bias.value;
    FractalNet net(16, taus, 8, 0.5, psi1, psi2);

    MatrixXd mean_M = MatrixXd::Zero(8, 16);
    for (double t : taus) mean_M += resample_matrix(16, t, 8, 0.5) / 3.0;
    const MatrixXd X = testing::gaussian(16, 5, rng);
    MatrixXd inner = W1 * mean_M * X;
    inner.colwise() += b1;
    MatrixXd want = W2 * inner;
    want.colwise() += b2;
    CHECK((net.infer(X) - want).cwiseAbs().maxCoeff() <= 1e-10);
    Context ctx;
    CHECK((net.forward(X, ctx) - want).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK_THROWS_AS(net.infer(MatrixXd::Zero(15, 1)), ShapeError);
}

TEST_CASE("MLP of zero hidden depth is one linear layer") {
    std::mt19937_64 rng(6);
    auto mlp = make_mlp({4, {}, 2, 0.5, true}, rng, "m");
    CHECK(mlp.size() == 1);
    std::vector<Param*> ps;
    mlp.parameters(ps);
    REQUIRE(ps.size() == 2);
    CHECK(ps[0]->name == "m.out.weight");
    auto deep = make_mlp({4, {7, 7}, 2, 0.5, true}, rng, "m");
    CHECK(deep.size() == 9);
}

TEST_CASE("dropout masks replay under the same seed and vanish in eval") {
    Dropout d(0.5);
    const MatrixXd x = MatrixXd::Ones(40, 50);
    std::mt19937_64 a(9), b(9);
    Context ca{Mode::Train, &a}, cb{Mode::Train, &b};
    const MatrixXd ya = d.forward(x, ca);
    const MatrixXd yb = d.forward(x, cb);
    CHECK(ya == yb);
    CHECK(((ya.array() == 0.0) || (ya.array() == 2.0)).all());
    CHECK(std::abs(ya.mean() - 1.0) < 0.1);
    Context ev = eval_ctx();
    CHECK(d.forward(x, ev) == x);
    Context missing{Mode::Train, nullptr};
    CHECK_THROWS_AS(d.forward(x, missing), ConfigError);
    CHECK_THROWS_AS(Dropout(1.0), ConfigError);
}

TEST_CASE("batch norm statistics") {
    BatchNorm bn(2, "bn");
    std::mt19937_64 rng(10);
    const MatrixXd x = (testing::gaussian(2, 64, rng, 3.0).array() + 5.0).matrix();
    Context tr{Mode::Train, &rng};
    const MatrixXd y = bn.forward(x, tr);
    CHECK(y.rowwise().mean().cwiseAbs().maxCoeff() <= 1e-10);
    const VectorXd var = (y.array().square().rowwise().sum() / 64.0).matrix();
    CHECK(var(0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(bn.running_mean.value(0) == doctest::Approx(0.1 * x.row(0).mean()));
    CHECK_FALSE(bn.running_var.trainable);
}

TEST_CASE("finite-difference gradients") {
    std::mt19937_64 rng(11);
    SUBCASE("dense") {
        Dense d(5, 3, rng, 2.0, "d");
        check_gradients(d, testing::gaussian(5, 4, rng), eval_ctx, rng);
    }
    SUBCASE("relu away from the kink") {
        Relu r;
        MatrixXd x = testing::gaussian(4, 6, rng);
        x = (x.array().abs() < 0.05).select(0.5, x);
        check_gradients(r, x, eval_ctx, rng);
    }
    SUBCASE("batch norm in train and eval mode") {
        BatchNorm bn(3, "bn");
        bn.gamma.value << 1.5, 0.7, -0.4;
        bn.beta.value << 0.1, 0.2, 0.3;
        auto train_ctx = [] { return Context{Mode::Train, nullptr}; };
        check_gradients(bn, testing::gaussian(3, 8, rng), train_ctx, rng);
        check_gradients(bn, testing::gaussian(3, 8, rng), eval_ctx, rng);
    }
    SUBCASE("dropout with a replayed mask") {
        Dropout d(0.3);
        std::mt19937_64 mask_rng(1);
        auto ctx = [&] {
            mask_rng.seed(77);
            return Context{Mode::Train, &mask_rng};
        };
        check_gradients(d, testing::gaussian(4, 5, rng), ctx, rng);
    }
    SUBCASE("homogenize") {
        Homogenize h(std::make_unique<Sequential>(make_mlp({4, {5}, 2, 0.0, false}, rng, "h")));
        check_gradients(h, testing::gaussian(4, 3, rng), eval_ctx, rng);
    }
    SUBCASE("full fractal network") {
        auto spec = small_spec();
        spec.dropout_rate = 0.2;
        Network net(spec, 3);
        std::vector<Param*> ps = net.parameters();
        std::mt19937_64 mask_rng(1);
        auto ctx = [&] {
            mask_rng.seed(78);
            return Context{Mode::Train, &mask_rng};
        };
        struct Adapter final : Module {
            Network* n;
            explicit Adapter(Network* net) : n(net) {}
            MatrixXd forward(const MatrixXd& x, Context& c) override { return n->forward(x, c); }
            MatrixXd backward(const MatrixXd& g) override { return n->backward(g); }
            MatrixXd infer(const MatrixXd& x) const override { return n->infer(x); }
            void parameters(std::vector<Param*>& out) override {
                for (auto* p : n->parameters()) out.push_back(p);
            }
            std::unique_ptr<Module> clone() const override { return nullptr; }
        } adapter(&net);
        check_gradients(adapter, testing::gaussian(12, 6, rng, 0.5), ctx, rng);
    }
    SUBCASE("plain MLP network") {
        auto spec = small_spec();
        spec.architecture = Architecture::Mlp;
        spec.mlp_hidden = {7, 5};
        spec.homogeneous = false;
        Network net(spec, 4);
        Context c{Mode::Train, nullptr};
        const MatrixXd x = testing::gaussian(12, 5, rng);
        const MatrixXd out = net.forward(x, c);
        CHECK(out.rows() == 3);
    }
}

TEST_CASE("adam step examples") {
    Param p{"p", MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, 0.5), true};
    Param frozen{"f", MatrixXd::Constant(1, 1, 2.0), MatrixXd::Constant(1, 1, 0.5), false};
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step({&p, &frozen}, st, cfg);
    CHECK(p.value(0) == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(frozen.value(0) == 2.0);
    adam_step({&p, &frozen}, st, cfg);
    CHECK(p.value(0) == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(st.step == 2);

    Param z{"z", MatrixXd::Constant(1, 1, 1.0), MatrixXd::Zero(1, 1), true};
    AdamState sz;
    adam_step({&z}, sz, cfg);
    CHECK(z.value(0) == 1.0);
}

TEST_CASE("checkpoint round trip reproduces predictions") {
    Network net(small_spec(), 12);
    std::mt19937_64 rng(13);
    // Move the batch norm running stats off their defaults first.
    Context tr{Mode::Train, &rng};
    net.forward(testing::gaussian(12, 20, rng), tr);
    const auto j = net.to_json();
    CHECK(j["format"] == "dpo-network/1");
    const Network back = Network::from_json(nlohmann::json::parse(j.dump()));
    const MatrixXd x = testing::gaussian(12, 7, rng);
    CHECK(back.infer(x) == net.infer(x));
    const Network copy = net;
    CHECK(copy.infer(x) == net.infer(x));

    auto broken = j;
    broken["params"][0]["shape"][0] = 99;
    CHECK_THROWS_AS(Network::from_json(broken), dpo::Error);
}

TEST_CASE("same seed gives the same initial network") {
    const Network a(small_spec(), 21), b(small_spec(), 21), c(small_spec(), 22);
    std::mt19937_64 rng(14);
    const MatrixXd x = testing::gaussian(12, 3, rng);
    CHECK(a.infer(x) == b.infer(x));
    CHECK(a.infer(x) != c.infer(x));
}

TEST_CASE("network spec validation lists every problem") {
    auto s = small_spec();
    s.Hp = 40;
    s.taus = {0.5, 0.7};
    s.dropout_rate = 1.5;
    try {
        validate(s);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("Hp must not exceed H") != std::string::npos);
        CHECK(msg.find("strictly decreasing") != std::string::npos);
        CHECK(msg.find("start at 1") != std::string::npos);
        CHECK(msg.find("dropout_rate") != std::string::npos);
    }
    const auto j = to_json(small_spec());
    const auto back = spec_from_json(j);
    CHECK(back.taus == small_spec().taus);
    CHECK(back.outputs() == 3);
}
