#include "dpo/nn.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dpo/errors.hpp"

namespace dpo::nn {

namespace {

using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

Param make_param(std::string name, Index rows, Index cols, bool trainable = true) {
    Param p;
    p.name = std::move(name);
    p.value = MatrixXd::Zero(rows, cols);
    p.grad = MatrixXd::Zero(rows, cols);
    p.trainable = trainable;
    return p;
}

}  // namespace

Tensor Tensor::from_matrix(const MatrixXd& m) {
    Tensor t;
    t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    t.values.reserve(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) t.values.push_back(m(i, j));
    }
    return t;
}

MatrixXd Tensor::to_matrix() const {
    if (shape.size() != 2) throw ShapeError("only rank-2 tensors convert to matrices");
    if (values.size() != shape[0] * shape[1]) throw ShapeError("tensor value count does not match its shape");
    MatrixXd m(idx(shape[0]), idx(shape[1]));
    for (std::size_t i = 0; i < shape[0]; ++i) {
        for (std::size_t j = 0; j < shape[1]; ++j) m(idx(i), idx(j)) = values[i * shape[1] + j];
    }
    return m;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, double init_gain, std::string name)
    : weight(make_param(name + ".weight", idx(out), idx(in))), bias(make_param(name + ".bias", idx(out), 1)) {
    std::normal_distribution<double> normal(0.0, std::sqrt(init_gain / static_cast<double>(std::max<std::size_t>(in, 1))));
    for (Index j = 0; j < weight.value.cols(); ++j) {
        for (Index i = 0; i < weight.value.rows(); ++i) weight.value(i, j) = normal(rng);
    }
}

MatrixXd Dense::forward(const MatrixXd& x, Context&) {
    if (x.rows() != weight.value.cols()) {
        throw ShapeError(fmt::format("{}: expected {} input features, got {}", weight.name, weight.value.cols(), x.rows()));
    }
    input_ = x;
    return infer(x);
}

MatrixXd Dense::infer(const MatrixXd& x) const {
    if (x.rows() != weight.value.cols()) {
        throw ShapeError(fmt::format("{}: expected {} input features, got {}", weight.name, weight.value.cols(), x.rows()));
    }
    MatrixXd y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
}

MatrixXd Dense::backward(const MatrixXd& g) {
    weight.grad.noalias() += g * input_.transpose();
    bias.grad.col(0) += g.rowwise().sum();
    return weight.value.transpose() * g;
}

void Dense::parameters(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---------------------------------------------------------------- ReLU

MatrixXd Relu::forward(const MatrixXd& x, Context&) {
    active_ = x.array() > 0.0;
    return infer(x);
}

MatrixXd Relu::infer(const MatrixXd& x) const { return x.cwiseMax(0.0); }

MatrixXd Relu::backward(const MatrixXd& g) { return active_.select(g, 0.0); }

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
}

MatrixXd Dropout::forward(const MatrixXd& x, Context& ctx) {
    if (ctx.mode == Mode::Eval || rate_ == 0.0) {
        mask_.resize(0, 0);
        return x;
    }
    if (!ctx.rng) throw ConfigError("dropout in train mode needs an RNG");
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        for (Index i = 0; i < x.rows(); ++i) mask_(i, j) = uniform(*ctx.rng) < rate_ ? 0.0 : keep_scale;
    }
    return x.cwiseProduct(mask_);
}

MatrixXd Dropout::backward(const MatrixXd& g) { return mask_.size() == 0 ? g : MatrixXd(g.cwiseProduct(mask_)); }

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t dim, std::string name, double momentum, double eps)
    : gamma(make_param(name + ".gamma", idx(dim), 1)),
      beta(make_param(name + ".beta", idx(dim), 1)),
      running_mean(make_param(name + ".running_mean", idx(dim), 1, false)),
      running_var(make_param(name + ".running_var", idx(dim), 1, false)),
      momentum_(momentum),
      eps_(eps) {
    gamma.value.setOnes();
    running_var.value.setOnes();
}

MatrixXd BatchNorm::forward(const MatrixXd& x, Context& ctx) {
    if (x.rows() != gamma.value.rows()) throw ShapeError(gamma.name + ": feature count mismatch");
    last_train_ = ctx.mode == Mode::Train;
    if (!last_train_) {
        inv_std_ = (running_var.value.col(0).array() + eps_).rsqrt();
        xhat_ = inv_std_.asDiagonal() * (x.colwise() - running_mean.value.col(0));
        return infer(x);
    }
    const double n = static_cast<double>(x.cols());
    const VectorXd mean = x.rowwise().mean();
    const MatrixXd centered = x.colwise() - mean;
    const VectorXd var = centered.array().square().rowwise().sum() / n;
    inv_std_ = (var.array() + eps_).rsqrt();
    xhat_ = inv_std_.asDiagonal() * centered;
    running_mean.value.col(0) = (1.0 - momentum_) * running_mean.value.col(0) + momentum_ * mean;
    running_var.value.col(0) = (1.0 - momentum_) * running_var.value.col(0) + momentum_ * var;
    MatrixXd y = gamma.value.col(0).asDiagonal() * xhat_;
    y.colwise() += beta.value.col(0);
    return y;
}

MatrixXd BatchNorm::infer(const MatrixXd& x) const {
    if (x.rows() != gamma.value.rows()) throw ShapeError(gamma.name + ": feature count mismatch");
    const VectorXd scale = gamma.value.col(0).array() * (running_var.value.col(0).array() + eps_).rsqrt();
    const VectorXd shift = beta.value.col(0).array() - running_mean.value.col(0).array() * scale.array();
    MatrixXd y = scale.asDiagonal() * x;
    y.colwise() += shift;
    return y;
}

MatrixXd BatchNorm::backward(const MatrixXd& g) {
    if (!last_train_) {
        // Eval statistics are constants, so the layer is a fixed affine map.
        gamma.grad.col(0) += g.cwiseProduct(xhat_).rowwise().sum();
        beta.grad.col(0) += g.rowwise().sum();
        const VectorXd scale = gamma.value.col(0).array() * inv_std_.array();
        return scale.asDiagonal() * g;
    }
    const double n = static_cast<double>(g.cols());
    gamma.grad.col(0) += g.cwiseProduct(xhat_).rowwise().sum();
    beta.grad.col(0) += g.rowwise().sum();
    const MatrixXd dxhat = gamma.value.col(0).asDiagonal() * g;
    const VectorXd sum_d = dxhat.rowwise().sum();
    const VectorXd sum_dx = dxhat.cwiseProduct(xhat_).rowwise().sum();
    MatrixXd dx = n * dxhat;
    dx.colwise() -= sum_d;
    dx -= xhat_.cwiseProduct(sum_dx.replicate(1, g.cols()));
    return (inv_std_ / n).asDiagonal() * dx;
}

void BatchNorm::parameters(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential copy(other);
        layers_ = std::move(copy.layers_);
    }
    return *this;
}

MatrixXd Sequential::forward(const MatrixXd& x, Context& ctx) {
    MatrixXd h = x;
    for (auto& l : layers_) h = l->forward(h, ctx);
    return h;
}

MatrixXd Sequential::backward(const MatrixXd& grad_out) {
    MatrixXd g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

MatrixXd Sequential::infer(const MatrixXd& x) const {
    MatrixXd h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
}

void Sequential::parameters(std::vector<Param*>& out) {
    for (auto& l : layers_) l->parameters(out);
}

Sequential make_mlp(const MlpShape& shape, std::mt19937_64& rng, const std::string& prefix) {
    Sequential seq;
    std::size_t prev = shape.in;
    for (std::size_t i = 0; i < shape.hidden.size(); ++i) {
        const std::size_t w = shape.hidden[i];
        seq.add(std::make_unique<Dense>(prev, w, rng, 2.0, fmt::format("{}.{}", prefix, i)));
        if (shape.batch_norm) seq.add(std::make_unique<BatchNorm>(w, fmt::format("{}.{}.bn", prefix, i)));
        seq.add(std::make_unique<Relu>());
        if (shape.dropout > 0.0) seq.add(std::make_unique<Dropout>(shape.dropout));
        prev = w;
    }
    seq.add(std::make_unique<Dense>(prev, shape.out, rng, 1.0, fmt::format("{}.out", prefix)));
    return seq;
}

// ---------------------------------------------------------------- Resample

VectorXd resample(const VectorXd& x, double tau, std::size_t Hp, double rescale_exponent) {
    if (Hp < 2) throw ConfigError("resample output length must be at least 2");
    if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("resample scale must lie in (0, 1]");
    const std::size_t H = static_cast<std::size_t>(x.size());
    if (H < 1) throw ShapeError("resample needs a non-empty input");

    // z[j] = x[0] + ... + x[j-1], z[0] = 0.
    VectorXd z(idx(H + 1));
    z(0) = 0.0;
    for (std::size_t j = 0; j < H; ++j) z(idx(j + 1)) = z(idx(j)) + x(idx(j));

    const auto start = std::min<std::size_t>(static_cast<std::size_t>(std::floor((1.0 - tau) * static_cast<double>(H))), H - 1);
    const double span = static_cast<double>(H - start);
    VectorXd level(idx(Hp + 1));
    for (std::size_t k = 0; k <= Hp; ++k) {
        const double pos = static_cast<double>(start) + static_cast<double>(k) * span / static_cast<double>(Hp);
        const auto lo = std::min<std::size_t>(static_cast<std::size_t>(pos), H);
        const double frac = pos - static_cast<double>(lo);
        level(idx(k)) = frac == 0.0 ? z(idx(lo)) : (1.0 - frac) * z(idx(lo)) + frac * z(idx(lo + 1));
    }
    const double scale = std::pow(tau, -rescale_exponent);
    VectorXd out(idx(Hp));
    for (std::size_t k = 0; k < Hp; ++k) out(idx(k)) = (level(idx(k + 1)) - level(idx(k))) * scale;
    return out;
}

MatrixXd resample_matrix(std::size_t H, double tau, std::size_t Hp, double rescale_exponent) {
    MatrixXd M(idx(Hp), idx(H));
    VectorXd e = VectorXd::Zero(idx(H));
    for (std::size_t i = 0; i < H; ++i) {
        e(idx(i)) = 1.0;
        M.col(idx(i)) = resample(e, tau, Hp, rescale_exponent);
        e(idx(i)) = 0.0;
    }
    return M;
}

std::vector<double> default_taus(std::size_t count) {
    std::vector<double> taus;
    for (std::size_t j = 0; j < count; ++j) taus.push_back(std::pow(4.0, -static_cast<double>(j) / 20.0));
    return taus;
}

// ---------------------------------------------------------------- FractalNet

FractalNet::FractalNet(std::size_t H, std::vector<double> taus, std::size_t Hp, double rescale_exponent,
                       Sequential psi1, Sequential psi2)
    : taus_(std::move(taus)), psi1_(std::move(psi1)), psi2_(std::move(psi2)) {
    if (taus_.empty()) throw ConfigError("fractal network needs at least one scale");
    for (double tau : taus_) resamplers_.push_back(resample_matrix(H, tau, Hp, rescale_exponent));
}

MatrixXd FractalNet::views(const MatrixXd& x) const {
    const Index H = resamplers_.front().cols();
    if (x.rows() != H) throw ShapeError(fmt::format("fractal network expects windows of length {}, got {}", H, x.rows()));
    const Index Hp = resamplers_.front().rows();
    const Index n = x.cols();
    MatrixXd stacked(Hp, n * static_cast<Index>(resamplers_.size()));
    for (std::size_t l = 0; l < resamplers_.size(); ++l) stacked.middleCols(idx(l) * n, n).noalias() = resamplers_[l] * x;
    return stacked;
}

MatrixXd FractalNet::average(const MatrixXd& embedded, Index n) const {
    MatrixXd mean = MatrixXd::Zero(embedded.rows(), n);
    for (std::size_t l = 0; l < resamplers_.size(); ++l) mean += embedded.middleCols(idx(l) * n, n);
    return mean / static_cast<double>(resamplers_.size());
}

MatrixXd FractalNet::forward(const MatrixXd& x, Context& ctx) {
    batch_ = x.cols();
    return psi2_.forward(average(psi1_.forward(views(x), ctx), batch_), ctx);
}

MatrixXd FractalNet::infer(const MatrixXd& x) const {
    return psi2_.infer(average(psi1_.infer(views(x)), x.cols()));
}

MatrixXd FractalNet::backward(const MatrixXd& grad_out) {
    const MatrixXd g_mean = psi2_.backward(grad_out) / static_cast<double>(resamplers_.size());
    const Index n = batch_;
    MatrixXd g_embedded(g_mean.rows(), n * static_cast<Index>(resamplers_.size()));
    for (std::size_t l = 0; l < resamplers_.size(); ++l) g_embedded.middleCols(idx(l) * n, n) = g_mean;
    const MatrixXd g_views = psi1_.backward(g_embedded);
    MatrixXd g_x = MatrixXd::Zero(resamplers_.front().cols(), n);
    for (std::size_t l = 0; l < resamplers_.size(); ++l) {
        g_x.noalias() += resamplers_[l].transpose() * g_views.middleCols(idx(l) * n, n);
    }
    return g_x;
}

void FractalNet::parameters(std::vector<Param*>& out) {
    psi1_.parameters(out);
    psi2_.parameters(out);
}

// ---------------------------------------------------------------- Homogenize

MatrixXd Homogenize::forward(const MatrixXd& x, Context& ctx) {
    norms_ = x.colwise().norm().transpose();
    unit_ = x;
    for (Index j = 0; j < x.cols(); ++j) {
        if (norms_(j) > 0.0) unit_.col(j) /= norms_(j);
    }
    core_out_ = core_->forward(unit_, ctx);
    return core_out_ * norms_.asDiagonal();
}

MatrixXd Homogenize::infer(const MatrixXd& x) const {
    const VectorXd norms = x.colwise().norm().transpose();
    MatrixXd unit = x;
    for (Index j = 0; j < x.cols(); ++j) {
        if (norms(j) > 0.0) unit.col(j) /= norms(j);
    }
    return core_->infer(unit) * norms.asDiagonal();
}

MatrixXd Homogenize::backward(const MatrixXd& g) {
    const MatrixXd g_unit = core_->backward(g * norms_.asDiagonal());
    const VectorXd g_norm = g.cwiseProduct(core_out_).colwise().sum().transpose();
    MatrixXd g_x = MatrixXd::Zero(unit_.rows(), unit_.cols());
    for (Index j = 0; j < g_x.cols(); ++j) {
        if (norms_(j) <= 0.0) continue;
        const auto u = unit_.col(j);
        const double radial = u.dot(g_unit.col(j));
        g_x.col(j) = (g_unit.col(j) - radial * u) / norms_(j) + g_norm(j) * u;
    }
    return g_x;
}

// ---------------------------------------------------------------- Network

void validate(const NetworkSpec& spec) {
    std::vector<std::string> problems;
    if (spec.H < 2) problems.emplace_back("H must be at least 2");
    if (spec.Q < 2) problems.emplace_back("Q must be at least 2");
    if (spec.dropout_rate < 0.0 || spec.dropout_rate >= 1.0) problems.emplace_back("dropout_rate must lie in [0, 1)");
    if (spec.architecture == Architecture::Fractal) {
        if (spec.Hp < 2) problems.emplace_back("Hp must be at least 2");
        if (spec.Hp > spec.H) problems.emplace_back("Hp must not exceed H");
        if (spec.K < 1) problems.emplace_back("K must be positive");
        if (spec.taus.empty()) problems.emplace_back("taus must not be empty");
        for (std::size_t j = 0; j < spec.taus.size(); ++j) {
            if (!(spec.taus[j] > 0.0 && spec.taus[j] <= 1.0)) problems.emplace_back("taus must lie in (0, 1]");
            if (j > 0 && !(spec.taus[j] < spec.taus[j - 1])) problems.emplace_back("taus must be strictly decreasing");
        }
        if (!spec.taus.empty() && spec.taus.front() != 1.0) problems.emplace_back("taus must start at 1");
    }
    if (!problems.empty()) throw ConfigError(fmt::format("invalid network spec: {}", fmt::join(problems, "; ")));
}

nlohmann::json to_json(const NetworkSpec& s) {
    return nlohmann::json{
        {"H", s.H},
        {"psi1_hidden", s.psi1_hidden},
        {"psi2_hidden", s.psi2_hidden},
        {"K", s.K},
        {"Q", s.Q},
        {"Hp", s.Hp},
        {"taus", s.taus},
        {"dropout_rate", s.dropout_rate},
        {"rescale_exponent", s.rescale_exponent},
        {"homogeneous", s.homogeneous},
        {"batch_norm", s.batch_norm},
        {"architecture", s.architecture == Architecture::Fractal ? "fractal" : "mlp"},
        {"mlp_hidden", s.mlp_hidden},
        {"objective", s.objective == Objective::Quantile ? "quantile" : "mean_squared"},
    };
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.H = j.at("H").get<std::size_t>();
    s.psi1_hidden = j.at("psi1_hidden").get<std::vector<std::size_t>>();
    s.psi2_hidden = j.at("psi2_hidden").get<std::vector<std::size_t>>();
    s.K = j.at("K").get<std::size_t>();
    s.Q = j.at("Q").get<std::size_t>();
    s.Hp = j.at("Hp").get<std::size_t>();
    s.taus = j.at("taus").get<std::vector<double>>();
    s.dropout_rate = j.at("dropout_rate").get<double>();
    s.rescale_exponent = j.at("rescale_exponent").get<double>();
    s.homogeneous = j.at("homogeneous").get<bool>();
    s.batch_norm = j.at("batch_norm").get<bool>();
    s.architecture = j.at("architecture").get<std::string>() == "mlp" ? Architecture::Mlp : Architecture::Fractal;
    s.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
    s.objective = j.at("objective").get<std::string>() == "mean_squared" ? Objective::MeanSquared : Objective::Quantile;
    return s;
}

Network::Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    validate(spec_);
    std::mt19937_64 rng(seed);
    std::unique_ptr<Module> core;
    if (spec_.architecture == Architecture::Fractal) {
        auto psi1 = make_mlp({spec_.Hp, spec_.psi1_hidden, spec_.K, spec_.dropout_rate, spec_.batch_norm}, rng, "psi1");
        auto psi2 =
            make_mlp({spec_.K, spec_.psi2_hidden, spec_.outputs(), spec_.dropout_rate, spec_.batch_norm}, rng, "psi2");
        core = std::make_unique<FractalNet>(spec_.H, spec_.taus, spec_.Hp, spec_.rescale_exponent, std::move(psi1),
                                            std::move(psi2));
    } else {
        core = std::make_unique<Sequential>(
            make_mlp({spec_.H, spec_.mlp_hidden, spec_.outputs(), spec_.dropout_rate, spec_.batch_norm}, rng, "mlp"));
    }
    root_ = spec_.homogeneous ? std::make_unique<Homogenize>(std::move(core)) : std::move(core);
}

Network::Network(const Network& other) : spec_(other.spec_), root_(other.root_->clone()) {}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        spec_ = other.spec_;
        root_ = other.root_->clone();
    }
    return *this;
}

std::vector<Param*> Network::parameters() {
    std::vector<Param*> out;
    root_->parameters(out);
    return out;
}

void Network::zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
}

nlohmann::json Network::to_json() const {
    auto& self = const_cast<Network&>(*this);
    nlohmann::json params = nlohmann::json::array();
    for (const auto* p : self.parameters()) {
        const auto t = Tensor::from_matrix(p->value);
        params.push_back({{"name", p->name}, {"shape", t.shape}, {"values", t.values}});
    }
    return nlohmann::json{{"format", "dpo-network/1"}, {"spec", nn::to_json(spec_)}, {"params", std::move(params)}};
}

Network Network::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "dpo-network/1") throw FormatError("unrecognized network container");
    Network net(spec_from_json(j.at("spec")), 0);
    const auto params = net.parameters();
    const auto& stored = j.at("params");
    if (stored.size() != params.size()) throw FormatError("checkpoint parameter count does not match spec");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = stored[i];
        if (e.at("name").get<std::string>() != params[i]->name) {
            throw FormatError("checkpoint parameter order mismatch at " + params[i]->name);
        }
        Tensor t{e.at("shape").get<std::vector<std::size_t>>(), e.at("values").get<std::vector<double>>()};
        MatrixXd m = t.to_matrix();
        if (m.rows() != params[i]->value.rows() || m.cols() != params[i]->value.cols()) {
            throw FormatError("checkpoint shape mismatch for " + params[i]->name);
        }
        params[i]->value = std::move(m);
    }
    return net;
}

// ---------------------------------------------------------------- Losses

double pinball_loss(double y, double y_pred, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
    const double u = y - y_pred;
    return std::max((alpha - 1.0) * u, alpha * u);
}

double pinball_grad(double y, double y_pred, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
    return y >= y_pred ? -alpha : 1.0 - alpha;
}

std::vector<double> quantile_levels(std::size_t Q) {
    std::vector<double> a;
    for (std::size_t j = 1; j < Q; ++j) a.push_back(static_cast<double>(j) / static_cast<double>(Q));
    return a;
}

double multi_quantile_loss(double y, const VectorXd& y_pred) {
    const auto levels = quantile_levels(static_cast<std::size_t>(y_pred.size()) + 1);
    double total = 0.0;
    for (std::size_t j = 0; j < levels.size(); ++j) total += pinball_loss(y, y_pred(idx(j)), levels[j]);
    return total;
}

LossResult multi_quantile_loss(const MatrixXd& predictions, const VectorXd& targets) {
    if (predictions.cols() != targets.size()) throw ShapeError("prediction batch does not match target count");
    if (predictions.rows() < 1) throw ShapeError("need at least one quantile output");
    const auto levels = quantile_levels(static_cast<std::size_t>(predictions.rows()) + 1);
    const double n = static_cast<double>(targets.size());
    LossResult out;
    out.grad.resize(predictions.rows(), predictions.cols());
    for (Index c = 0; c < predictions.cols(); ++c) {
        for (Index j = 0; j < predictions.rows(); ++j) {
            const double a = levels[static_cast<std::size_t>(j)];
            out.value += pinball_loss(targets(c), predictions(j, c), a);
            out.grad(j, c) = pinball_grad(targets(c), predictions(j, c), a) / n;
        }
    }
    out.value /= n;
    return out;
}

LossResult mean_squared_loss(const MatrixXd& predictions, const VectorXd& targets) {
    if (predictions.rows() != 1 || predictions.cols() != targets.size()) {
        throw ShapeError("mean squared loss expects a 1 x N prediction row");
    }
    const double n = static_cast<double>(targets.size());
    const VectorXd diff = predictions.row(0).transpose() - targets;
    LossResult out;
    out.value = diff.squaredNorm() / n;
    out.grad = (2.0 / n) * diff.transpose();
    return out;
}

// ---------------------------------------------------------------- Adam

void adam_step(const std::vector<Param*>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
            state.v.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (!p.trainable) continue;
        if (state.m[i].rows() != p.grad.rows() || state.m[i].cols() != p.grad.cols()) {
            throw ShapeError("optimizer state shape mismatch for " + p.name);
        }
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * p.grad;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= cfg.lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.eps);
    }
}

}  // namespace dpo::nn
