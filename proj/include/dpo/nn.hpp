#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dpo::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Row-major value container used for checkpoints.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    static Tensor from_matrix(const MatrixXd& m);
    MatrixXd to_matrix() const;
};

enum class Mode { Train, Eval };

struct Context {
    Mode mode = Mode::Eval;
    std::mt19937_64* rng = nullptr;  // required for dropout in train mode
};

struct Param {
    std::string name;
    MatrixXd value;
    MatrixXd grad;
    bool trainable = true;
};

// Batches are column-major: each column of a features x batch matrix is one
// sample. forward() caches what backward() needs; infer() is the cache-free
// eval-mode path and is safe to call concurrently.
class Module {
public:
    virtual ~Module() = default;
    virtual MatrixXd forward(const MatrixXd& x, Context& ctx) = 0;
    virtual MatrixXd backward(const MatrixXd& grad_out) = 0;
    virtual MatrixXd infer(const MatrixXd& x) const = 0;
    virtual void parameters(std::vector<Param*>& out) = 0;
    virtual std::unique_ptr<Module> clone() const = 0;
};

class Dense final : public Module {
public:
    Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, double init_gain, std::string name);
    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override;
    void parameters(std::vector<Param*>& out) override;
    std::unique_ptr<Module> clone() const override { return std::make_unique<Dense>(*this); }

    Param weight;  // out x in
    Param bias;    // out x 1

private:
    MatrixXd input_;
};

class Relu final : public Module {
public:
    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override;
    void parameters(std::vector<Param*>&) override {}
    std::unique_ptr<Module> clone() const override { return std::make_unique<Relu>(*this); }

private:
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> active_;
};

class Dropout final : public Module {
public:
    explicit Dropout(double rate);
    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override { return x; }
    void parameters(std::vector<Param*>&) override {}
    std::unique_ptr<Module> clone() const override { return std::make_unique<Dropout>(*this); }

private:
    double rate_;
    MatrixXd mask_;  // empty when the last forward was the identity
};

class BatchNorm final : public Module {
public:
    BatchNorm(std::size_t dim, std::string name, double momentum = 0.1, double eps = 1e-5);
    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override;
    void parameters(std::vector<Param*>& out) override;
    std::unique_ptr<Module> clone() const override { return std::make_unique<BatchNorm>(*this); }

    Param gamma, beta;
    Param running_mean, running_var;  // not trainable

private:
    double momentum_, eps_;
    bool last_train_ = false;
    MatrixXd xhat_;
    VectorXd inv_std_;
};

class Sequential final : public Module {
public:
    Sequential() = default;
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;

    void add(std::unique_ptr<Module> m) { layers_.push_back(std::move(m)); }
    std::size_t size() const { return layers_.size(); }
    Module& layer(std::size_t i) { return *layers_[i]; }

    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override;
    void parameters(std::vector<Param*>& out) override;
    std::unique_ptr<Module> clone() const override { return std::make_unique<Sequential>(*this); }

private:
    std::vector<std::unique_ptr<Module>> layers_;
};

struct MlpShape {
    std::size_t in = 0;
    std::vector<std::size_t> hidden;
    std::size_t out = 0;
    double dropout = 0.0;
    bool batch_norm = true;
};

// Dense -> [BatchNorm] -> ReLU -> [Dropout] per hidden width, then a final
// linear Dense layer.
Sequential make_mlp(const MlpShape& shape, std::mt19937_64& rng, const std::string& prefix);

// Cumulate, take the suffix of length ~tau*H, interpolate linearly to Hp + 1
// points, difference, and scale by tau^-exponent.
VectorXd resample(const VectorXd& x, double tau, std::size_t Hp, double rescale_exponent);
// The same linear map as an Hp x H matrix.
MatrixXd resample_matrix(std::size_t H, double tau, std::size_t Hp, double rescale_exponent);

std::vector<double> default_taus(std::size_t count = 22);

// psi(x) = psi2( mean_i psi1(Resample(x, tau_i)) ). All views share psi1 and
// are pushed through it as one batch.
class FractalNet final : public Module {
public:
    FractalNet(std::size_t H, std::vector<double> taus, std::size_t Hp, double rescale_exponent, Sequential psi1,
               Sequential psi2);
    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override;
    void parameters(std::vector<Param*>& out) override;
    std::unique_ptr<Module> clone() const override { return std::make_unique<FractalNet>(*this); }

    const std::vector<MatrixXd>& resample_matrices() const { return resamplers_; }

private:
    MatrixXd views(const MatrixXd& x) const;
    MatrixXd average(const MatrixXd& embedded, Eigen::Index batch) const;

    std::vector<double> taus_;
    std::vector<MatrixXd> resamplers_;
    Sequential psi1_, psi2_;
    Eigen::Index batch_ = 0;
};

// psi(x) = ||x|| core(x / ||x||), psi(0) = 0.
class Homogenize final : public Module {
public:
    explicit Homogenize(std::unique_ptr<Module> core) : core_(std::move(core)) {}
    Homogenize(const Homogenize& other) : core_(other.core_->clone()) {}
    MatrixXd forward(const MatrixXd& x, Context& ctx) override;
    MatrixXd backward(const MatrixXd& grad_out) override;
    MatrixXd infer(const MatrixXd& x) const override;
    void parameters(std::vector<Param*>& out) override { core_->parameters(out); }
    std::unique_ptr<Module> clone() const override { return std::make_unique<Homogenize>(*this); }

private:
    std::unique_ptr<Module> core_;
    MatrixXd unit_;
    VectorXd norms_;
    MatrixXd core_out_;
};

enum class Architecture { Fractal, Mlp };
enum class Objective { Quantile, MeanSquared };

struct NetworkSpec {
    std::size_t H = 256;  // input window length
    std::vector<std::size_t> psi1_hidden{256, 256, 256};
    std::vector<std::size_t> psi2_hidden = std::vector<std::size_t>(8, 128);
    std::size_t K = 256;
    std::size_t Q = 32;
    std::size_t Hp = 64;
    std::vector<double> taus = default_taus();
    double dropout_rate = 0.5;
    double rescale_exponent = 0.5;
    bool homogeneous = true;
    bool batch_norm = true;
    Architecture architecture = Architecture::Fractal;
    std::vector<std::size_t> mlp_hidden{512, 512, 512, 512};
    Objective objective = Objective::Quantile;

    std::size_t outputs() const { return objective == Objective::Quantile ? Q - 1 : 1; }
};

// Throws ConfigError listing every violated constraint.
void validate(const NetworkSpec& spec);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

// The full predictor psi: optional homogeneity wrapper around either a
// fractal network or a plain MLP.
class Network {
public:
    Network(const NetworkSpec& spec, std::uint64_t seed);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const NetworkSpec& spec() const { return spec_; }
    MatrixXd forward(const MatrixXd& x, Context& ctx) { return root_->forward(x, ctx); }
    MatrixXd backward(const MatrixXd& grad_out) { return root_->backward(grad_out); }
    MatrixXd infer(const MatrixXd& x) const { return root_->infer(x); }
    std::vector<Param*> parameters();
    void zero_grad();

    nlohmann::json to_json() const;
    static Network from_json(const nlohmann::json& j);

private:
    NetworkSpec spec_;
    std::unique_ptr<Module> root_;
};

double pinball_loss(double y, double y_pred, double alpha);
// Derivative of the pinball loss with respect to the prediction; at the kink
// the alpha-side slope is used (d/dy_pred = -alpha).
double pinball_grad(double y, double y_pred, double alpha);
std::vector<double> quantile_levels(std::size_t Q);
double multi_quantile_loss(double y, const VectorXd& y_pred);

struct LossResult {
    double value = 0.0;
    MatrixXd grad;  // d value / d predictions, same shape as predictions
};

// Batch mean of the summed pinball losses; predictions are (Q-1) x N.
LossResult multi_quantile_loss(const MatrixXd& predictions, const VectorXd& targets);
// Batch mean of squared error; predictions are 1 x N.
LossResult mean_squared_loss(const MatrixXd& predictions, const VectorXd& targets);

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<MatrixXd> m, v;
    long step = 0;
};

void adam_step(const std::vector<Param*>& params, AdamState& state, const AdamConfig& cfg = {});

}  // namespace dpo::nn
