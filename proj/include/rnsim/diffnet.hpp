#ifndef RNSIM_DIFFNET_HPP
#define RNSIM_DIFFNET_HPP

// Small dense feed-forward networks with hand-written reverse mode and an
// Adam optimiser. Samples are stored column-wise.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rnsim/errors.hpp"

namespace rnsim {

using Rng = std::mt19937_64;

enum class Activation { tanh, identity };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

class Mlp;

/// Activations recorded by a forward pass; consumed by Mlp::backward.
struct MlpCache {
  const Mlp* owner = nullptr;
  std::vector<Eigen::MatrixXd> activations;  // [0] = input, [l + 1] = output of layer l
};

/// Fully connected network: affine layers, `hidden` activation between them,
/// linear output. All parameters live in one flat vector (per layer: W then b,
/// W column-major out x in).
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> widths, Activation hidden) : widths_(std::move(widths)), hidden_(hidden) {
    if (widths_.size() < 2) throw ConfigError("mlp: need at least input and output widths");
    for (int w : widths_)
      if (w <= 0) throw ConfigError("mlp: layer widths must be positive");
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(total);
      total += static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    params_ = Eigen::VectorXd::Zero(total);
  }

  /// Uniform fan-in initialisation; zero biases. With `zero_last` the output
  /// layer starts at exactly zero.
  void initialize(Rng& rng, bool zero_last = false) {
    for (int l = 0; l < num_layers(); ++l) {
      auto w = weight(l);
      const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
      bias(l).setZero();
    }
    if (zero_last) {
      weight(num_layers() - 1).setZero();
      bias(num_layers() - 1).setZero();
    }
  }

  int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(int l) { return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]}; }
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const {
    return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias(int l) {
    return {params_.data() + offsets_[l] + widths_[l + 1] * widths_[l], widths_[l + 1]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const {
    return {params_.data() + offsets_[l] + widths_[l + 1] * widths_[l], widths_[l + 1]};
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const {
    check_input(input);
    Eigen::MatrixXd a = input;
    for (int l = 0; l < num_layers(); ++l) {
      Eigen::MatrixXd z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) activate(z);
      a = std::move(z);
    }
    if (!a.allFinite()) throw std::domain_error("mlp forward: non-finite output");
    return a;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return forward(Eigen::MatrixXd(x)).col(0);
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, MlpCache& cache) const {
    check_input(input);
    cache.owner = this;
    cache.activations.resize(num_layers() + 1);
    cache.activations[0] = input;
    for (int l = 0; l < num_layers(); ++l) {
      Eigen::MatrixXd z = weight(l) * cache.activations[l];
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) activate(z);
      cache.activations[l + 1] = std::move(z);
    }
    if (!cache.activations.back().allFinite()) throw std::domain_error("mlp forward: non-finite output");
    return cache.activations.back();
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output) for the
  /// batch of the cached forward pass. Optionally returns d(loss)/d(input).
  void backward(const MlpCache& cache, const Eigen::MatrixXd& output_grad, Eigen::VectorXd& grad,
                Eigen::MatrixXd* input_grad = nullptr) const {
    if (cache.owner != this || static_cast<int>(cache.activations.size()) != num_layers() + 1)
      throw std::logic_error("mlp backward: activation cache does not belong to this network");
    const Eigen::Index batch = cache.activations[0].cols();
    if (output_grad.rows() != output_dim() || output_grad.cols() != batch)
      throw std::logic_error("mlp backward: output gradient shape mismatch");
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
    Eigen::MatrixXd delta = output_grad;
    for (int l = num_layers() - 1; l >= 0; --l) {
      if (l + 1 < num_layers()) activate_backward(cache.activations[l + 1], delta);
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], widths_[l + 1], widths_[l]);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + widths_[l + 1] * widths_[l], widths_[l + 1]);
      gw.noalias() += delta * cache.activations[l].transpose();
      gb += delta.rowwise().sum();
      if (l > 0 || input_grad) {
        Eigen::MatrixXd prev = weight(l).transpose() * delta;
        delta = std::move(prev);
      }
    }
    if (input_grad) *input_grad = std::move(delta);
  }

 private:
  void check_input(const Eigen::MatrixXd& input) const {
    if (input.rows() != input_dim())
      throw std::invalid_argument("mlp forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                                  std::to_string(input_dim()));
    if (!input.allFinite()) throw std::domain_error("mlp forward: non-finite input");
  }

  void activate(Eigen::MatrixXd& z) const {
    if (hidden_ == Activation::tanh) z = z.array().tanh().matrix();
  }

  // `out` holds post-activation values of the layer.
  void activate_backward(const Eigen::MatrixXd& out, Eigen::MatrixXd& delta) const {
    if (hidden_ == Activation::tanh) delta.array() *= 1.0 - out.array().square();
  }

  std::vector<int> widths_;
  std::vector<Eigen::Index> offsets_;
  Activation hidden_ = Activation::tanh;
  Eigen::VectorXd params_;
};

/// Max-shifted softmax.
inline Eigen::VectorXd softmax_normalize(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - mx).exp().matrix();
  return p / p.sum();
}

/// Column-wise log-softmax of a B x n logit matrix.
inline Eigen::MatrixXd log_softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    const double lse = mx + std::log((logits.col(c).array() - mx).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 10.0;  // applied by training loops, not by adam_step
};

struct OptimizerState {
  AdamConfig config;
  Eigen::VectorXd first_moment, second_moment;
  std::int64_t step = 0;

  OptimizerState() = default;
  OptimizerState(AdamConfig c, Eigen::Index n)
      : config(c), first_moment(Eigen::VectorXd::Zero(n)), second_moment(Eigen::VectorXd::Zero(n)) {}
};

/// Bias-corrected Adam update, in place.
inline void adam_step(OptimizerState& opt, Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                      double learning_rate_scale = 1.0) {
  if (params.size() != grads.size() || opt.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!grads.allFinite()) throw std::domain_error("adam_step: non-finite gradient");
  const AdamConfig& c = opt.config;
  ++opt.step;
  opt.first_moment = c.beta1 * opt.first_moment + (1.0 - c.beta1) * grads;
  opt.second_moment = c.beta2 * opt.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  const double lr = c.learning_rate * learning_rate_scale;
  params.array() -= lr * (opt.first_moment.array() / bc1) /
                    ((opt.second_moment.array() / bc2).sqrt() + c.epsilon);
}

/// Scales `grads` down so that its Euclidean norm is at most `max_norm`.
inline double clip_by_norm(Eigen::VectorXd& grads, double max_norm) {
  const double norm = grads.norm();
  if (max_norm > 0.0 && norm > max_norm) grads *= max_norm / norm;
  return norm;
}

// -- checkpoints ------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const Mlp& net) {
  nlohmann::json j;
  j["format"] = "rnsim-mlp";
  j["version"] = kCheckpointVersion;
  j["widths"] = net.widths();
  j["activation"] = to_string(net.hidden_activation());
  j["params"] = std::vector<double>(net.params().data(), net.params().data() + net.params().size());
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rnsim-mlp") throw DataError("checkpoint: not an mlp record");
  if (j.value("version", 0) != kCheckpointVersion) throw DataError("checkpoint: unsupported mlp version");
  Mlp net(j.at("widths").get<std::vector<int>>(), activation_from_string(j.at("activation").get<std::string>()));
  const auto p = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(p.size()) != net.parameter_count())
    throw DataError("checkpoint: parameter count does not match widths");
  net.params() = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  return net;
}

}  // namespace rnsim

#endif  // RNSIM_DIFFNET_HPP
