#ifndef RNSIM_DENSITY_FLOW_HPP
#define RNSIM_DENSITY_FLOW_HPP

// Autoregressive conditional density with linear-interpolation spline bins.
//
// Every target coordinate j is affinely rescaled to [0, 1] and split into B
// equal bins. A conditioner network maps (condition, already generated
// coordinates) to B logits; their softmax gives bin masses p_k, so the density
// of coordinate j is B * p_k on bin k and its CDF is piecewise linear. Sampling
// inverts that CDF one coordinate at a time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rnsim/diffnet.hpp"
#include "rnsim/errors.hpp"

namespace rnsim {

/// Bin masses of one conditional; bins are right-open except the last.
struct BinDensity {
  Eigen::VectorXd probs;

  int bins() const { return static_cast<int>(probs.size()); }

  static int bin_of(double u, int bins) {
    const int k = static_cast<int>(std::floor(u * bins));
    return std::clamp(k, 0, bins - 1);
  }

  double density(double u) const { return bins() * probs[bin_of(u, bins())]; }

  double cdf(double u) const {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    const int k = bin_of(u, bins());
    double below = 0.0;
    for (int i = 0; i < k; ++i) below += probs[i];
    return below + probs[k] * (u * bins() - k);
  }

  double inverse_cdf(double u) const { return inverse_cdf(probs.data(), bins(), u); }

  static double inverse_cdf(const double* p, int bins, double u) {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    double below = 0.0;
    int k = 0;
    for (; k < bins - 1; ++k) {
      if (u < below + p[k]) break;
      below += p[k];
    }
    const double frac = p[k] > 0.0 ? (u - below) / p[k] : 0.0;
    return std::clamp((k + std::clamp(frac, 0.0, 1.0)) / bins, 0.0, 1.0);
  }
};

struct FlowArchitecture {
  int condition_dim = 3;
  int dim = 4;
  int bins = 64;
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::tanh;
};

class ConditionalFlow {
 public:
  ConditionalFlow() = default;

  /// Random hidden layers, zero output layers: every conditional starts uniform.
  ConditionalFlow(FlowArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
    if (arch_.dim < 1 || arch_.condition_dim < 0) throw ConfigError("flow: invalid dimensions");
    if (arch_.bins < 2) throw ConfigError("flow: need at least two bins");
    Rng rng(seed);
    for (int j = 0; j < arch_.dim; ++j) {
      std::vector<int> widths{arch_.condition_dim + j};
      if (widths[0] == 0) widths[0] = 1;  // unconditional first coordinate gets a constant input
      widths.insert(widths.end(), arch_.hidden.begin(), arch_.hidden.end());
      widths.push_back(arch_.bins);
      Mlp net(widths, arch_.activation);
      net.initialize(rng, /*zero_last=*/true);
      conditioners_.push_back(std::move(net));
    }
    lo_ = Eigen::VectorXd::Zero(arch_.dim);
    hi_ = Eigen::VectorXd::Ones(arch_.dim);
    cond_lo_ = Eigen::VectorXd::Constant(arch_.condition_dim, -1.0);
    cond_hi_ = Eigen::VectorXd::Constant(arch_.condition_dim, 1.0);
  }

  const FlowArchitecture& architecture() const { return arch_; }
  int dim() const { return arch_.dim; }
  int condition_dim() const { return arch_.condition_dim; }
  int bins() const { return arch_.bins; }

  std::vector<Mlp>& conditioners() { return conditioners_; }
  const std::vector<Mlp>& conditioners() const { return conditioners_; }

  const Eigen::VectorXd& lo() const { return lo_; }
  const Eigen::VectorXd& hi() const { return hi_; }
  const Eigen::VectorXd& condition_lo() const { return cond_lo_; }
  const Eigen::VectorXd& condition_hi() const { return cond_hi_; }

  void set_bounds(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    if (lo.size() != dim() || hi.size() != dim()) throw ConfigError("flow: bound size mismatch");
    for (int j = 0; j < dim(); ++j)
      if (!(hi[j] > lo[j])) throw ConfigError("flow: upper bound must exceed lower bound");
    lo_ = std::move(lo);
    hi_ = std::move(hi);
  }

  void set_condition_bounds(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    if (lo.size() != condition_dim() || hi.size() != condition_dim())
      throw ConfigError("flow: condition bound size mismatch");
    for (int j = 0; j < condition_dim(); ++j)
      if (!(hi[j] > lo[j])) throw ConfigError("flow: condition upper bound must exceed lower bound");
    cond_lo_ = std::move(lo);
    cond_hi_ = std::move(hi);
  }

  /// Network input for conditioner j: condition mapped to [-1, 1] followed by
  /// the first j unit-space coordinates mapped to [-1, 1].
  Eigen::MatrixXd conditioner_input(int j, const Eigen::MatrixXd& conditions, const Eigen::MatrixXd& unit) const {
    const Eigen::Index n = conditions.cols();
    const int c = condition_dim();
    if (c + j == 0) return Eigen::MatrixXd::Zero(1, n);
    Eigen::MatrixXd in(c + j, n);
    for (int r = 0; r < c; ++r)
      in.row(r) = ((conditions.row(r).array() - cond_lo_[r]) * (2.0 / (cond_hi_[r] - cond_lo_[r])) - 1.0).matrix();
    for (int r = 0; r < j; ++r) in.row(c + r) = (2.0 * unit.row(r).array() - 1.0).matrix();
    return in;
  }

 private:
  FlowArchitecture arch_;
  std::vector<Mlp> conditioners_;
  Eigen::VectorXd lo_, hi_, cond_lo_, cond_hi_;
};

/// Per-coordinate [min, max] of the data widened by `margin` times the range.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> padded_bounds(const Eigen::MatrixXd& data, double margin) {
  Eigen::VectorXd lo = data.rowwise().minCoeff();
  Eigen::VectorXd hi = data.rowwise().maxCoeff();
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    double range = hi[r] - lo[r];
    if (!(range > 0.0)) range = std::max(1e-6, std::abs(hi[r]) * 1e-3);
    lo[r] -= margin * range;
    hi[r] += margin * range;
  }
  return {lo, hi};
}

// -- single-record operations -----------------------------------------------

inline Eigen::VectorXd rescale_to_unit(const ConditionalFlow& flow, const Eigen::VectorXd& x) {
  if (x.size() != flow.dim()) throw std::invalid_argument("rescale_to_unit: dimension mismatch");
  Eigen::VectorXd u(x.size());
  for (int j = 0; j < flow.dim(); ++j) {
    if (!(x[j] >= flow.lo()[j] && x[j] <= flow.hi()[j])) {
      std::ostringstream os;
      os << "flow coordinate " << j << " = " << x[j] << " outside calibrated range [" << flow.lo()[j] << ", "
         << flow.hi()[j] << "]";
      throw RangeError(os.str());
    }
    u[j] = (x[j] - flow.lo()[j]) / (flow.hi()[j] - flow.lo()[j]);
  }
  return u;
}

inline Eigen::VectorXd rescale_from_unit(const ConditionalFlow& flow, const Eigen::VectorXd& u) {
  return (flow.lo().array() + u.array() * (flow.hi() - flow.lo()).array()).matrix();
}

/// Bin masses of coordinate j given the condition and the raw coordinates
/// x_{:j} already generated.
inline BinDensity bin_probs(const ConditionalFlow& flow, int j, const Eigen::VectorXd& condition,
                            const Eigen::VectorXd& prefix) {
  if (j < 0 || j >= flow.dim()) throw std::invalid_argument("bin_probs: coordinate index out of range");
  if (condition.size() != flow.condition_dim() || prefix.size() != j)
    throw std::invalid_argument("bin_probs: condition or prefix length mismatch");
  Eigen::MatrixXd unit(j, 1);
  for (int r = 0; r < j; ++r) unit(r, 0) = (prefix[r] - flow.lo()[r]) / (flow.hi()[r] - flow.lo()[r]);
  const Eigen::MatrixXd in = flow.conditioner_input(j, Eigen::MatrixXd(condition), unit);
  return {softmax_normalize(flow.conditioners()[j].forward(in).col(0))};
}

/// Unit-cube log density: sum_j log(B * p_{k(j)}).
inline double log_density(const ConditionalFlow& flow, const Eigen::VectorXd& x_next, const Eigen::VectorXd& condition) {
  const Eigen::VectorXd u = rescale_to_unit(flow, x_next);
  double out = 0.0;
  for (int j = 0; j < flow.dim(); ++j) {
    const BinDensity p = bin_probs(flow, j, condition, x_next.head(j));
    out += std::log(p.density(u[j]));
  }
  return out;
}

/// One transition: u in [0,1]^d pushed through the triangular inverse-CDF map.
inline Eigen::VectorXd sample_step(const ConditionalFlow& flow, const Eigen::VectorXd& condition,
                                   const Eigen::VectorXd& u) {
  if (u.size() != flow.dim()) throw std::invalid_argument("sample_step: dimension mismatch");
  Eigen::VectorXd x(flow.dim());
  for (int j = 0; j < flow.dim(); ++j) {
    const BinDensity p = bin_probs(flow, j, condition, x.head(j));
    const double unit = p.inverse_cdf(std::clamp(u[j], 0.0, 1.0));
    x[j] = flow.lo()[j] + unit * (flow.hi()[j] - flow.lo()[j]);
    // The endpoints must map exactly onto the bounds.
    if (unit == 1.0) x[j] = flow.hi()[j];
  }
  return x;
}

// -- batched operations ---------------------------------------------------------

/// Samples column-wise: conditions c x n, uniforms d x n -> raw states d x n.
inline Eigen::MatrixXd sample_batch(const ConditionalFlow& flow, const Eigen::MatrixXd& conditions,
                                    const Eigen::MatrixXd& uniforms) {
  const Eigen::Index n = conditions.cols();
  if (uniforms.rows() != flow.dim() || uniforms.cols() != n || conditions.rows() != flow.condition_dim())
    throw std::invalid_argument("sample_batch: shape mismatch");
  Eigen::MatrixXd unit(flow.dim(), n);
  for (int j = 0; j < flow.dim(); ++j) {
    const Eigen::MatrixXd in = flow.conditioner_input(j, conditions, unit);
    Eigen::MatrixXd logits = flow.conditioners()[j].forward(in);
    for (Eigen::Index c = 0; c < n; ++c) {
      auto col = logits.col(c);
      const double mx = col.maxCoeff();
      col = (col.array() - mx).exp().matrix();
      col /= col.sum();
      unit(j, c) = BinDensity::inverse_cdf(col.data(), flow.bins(), std::clamp(uniforms(j, c), 0.0, 1.0));
    }
  }
  Eigen::MatrixXd x(flow.dim(), n);
  for (int j = 0; j < flow.dim(); ++j) {
    const double lo = flow.lo()[j], span = flow.hi()[j] - flow.lo()[j];
    for (Eigen::Index c = 0; c < n; ++c) x(j, c) = unit(j, c) == 1.0 ? flow.hi()[j] : lo + unit(j, c) * span;
  }
  return x;
}

/// Weighted transition records, stored column-wise.
struct FlowDataset {
  Eigen::MatrixXd conditions;  // c x n
  Eigen::MatrixXd targets;     // d x n
  Eigen::VectorXd weights;     // n

  Eigen::Index size() const { return targets.cols(); }

  FlowDataset slice(Eigen::Index begin, Eigen::Index count) const {
    return {conditions.middleCols(begin, count), targets.middleCols(begin, count), weights.segment(begin, count)};
  }
};

namespace detail {

// Unit coordinates and bin indices of a dataset, range-checked once.
struct PreparedData {
  Eigen::MatrixXd conditions;
  Eigen::MatrixXd unit;
  Eigen::MatrixXi bin;
  Eigen::VectorXd weights;
};

inline PreparedData prepare(const ConditionalFlow& flow, const FlowDataset& data) {
  if (data.conditions.rows() != flow.condition_dim() || data.targets.rows() != flow.dim() ||
      data.conditions.cols() != data.targets.cols() || data.weights.size() != data.targets.cols())
    throw std::invalid_argument("flow dataset: shape mismatch");
  if (!data.targets.allFinite() || !data.conditions.allFinite()) throw DataError("flow dataset: non-finite state");
  for (Eigen::Index i = 0; i < data.weights.size(); ++i)
    if (!std::isfinite(data.weights[i]) || data.weights[i] < 0.0)
      throw DataError("flow dataset: weights must be finite and non-negative");
  PreparedData p{data.conditions, Eigen::MatrixXd(flow.dim(), data.size()), Eigen::MatrixXi(flow.dim(), data.size()),
                 data.weights};
  for (Eigen::Index c = 0; c < data.size(); ++c) {
    p.unit.col(c) = rescale_to_unit(flow, data.targets.col(c));
    for (int j = 0; j < flow.dim(); ++j) p.bin(j, c) = BinDensity::bin_of(p.unit(j, c), flow.bins());
  }
  return p;
}

// Mean of -w log density over columns [begin, begin + count); gradients are
// accumulated (already divided by `normalizer`) when `grads` is non-null.
inline double nll_chunk(const ConditionalFlow& flow, const PreparedData& p, const std::vector<Eigen::Index>& idx,
                        std::size_t begin, std::size_t count, double normalizer,
                        std::vector<Eigen::VectorXd>* grads) {
  const Eigen::Index n = static_cast<Eigen::Index>(count);
  Eigen::MatrixXd cond(flow.condition_dim(), n), unit(flow.dim(), n);
  Eigen::VectorXd w(n);
  Eigen::MatrixXi bin(flow.dim(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Eigen::Index src = idx[begin + c];
    cond.col(c) = p.conditions.col(src);
    unit.col(c) = p.unit.col(src);
    bin.col(c) = p.bin.col(src);
    w[c] = p.weights[src];
  }
  const double log_bins = std::log(static_cast<double>(flow.bins()));
  double total = 0.0;
  MlpCache cache;
  for (int j = 0; j < flow.dim(); ++j) {
    const Eigen::MatrixXd in = flow.conditioner_input(j, cond, unit);
    const auto& net = flow.conditioners()[j];
    const Eigen::MatrixXd logits = grads ? net.forward(in, cache) : net.forward(in);
    const Eigen::MatrixXd ls = log_softmax_columns(logits);
    for (Eigen::Index c = 0; c < n; ++c) total -= w[c] * (log_bins + ls(bin(j, c), c));
    if (grads) {
      Eigen::MatrixXd dlogits = ls.array().exp().matrix();
      for (Eigen::Index c = 0; c < n; ++c) {
        dlogits(bin(j, c), c) -= 1.0;
        dlogits.col(c) *= w[c] / normalizer;
      }
      net.backward(cache, dlogits, (*grads)[j]);
    }
  }
  return total / normalizer;
}

}  // namespace detail

/// Weighted negative log-likelihood, mean over records of -w * log density.
/// When `grads` is given it receives one gradient vector per conditioner.
inline double weighted_nll(const ConditionalFlow& flow, const FlowDataset& data,
                           std::vector<Eigen::VectorXd>* grads = nullptr) {
  if (data.size() == 0) throw DataError("weighted_nll: empty dataset");
  const detail::PreparedData p = detail::prepare(flow, data);
  if (grads) {
    grads->assign(flow.dim(), Eigen::VectorXd());
    for (int j = 0; j < flow.dim(); ++j) (*grads)[j] = Eigen::VectorXd::Zero(flow.conditioners()[j].parameter_count());
  }
  std::vector<Eigen::Index> idx(data.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const std::size_t chunk = 8192;
  double loss = 0.0;
  for (std::size_t b = 0; b < idx.size(); b += chunk)
    loss += detail::nll_chunk(flow, p, idx, b, std::min(chunk, idx.size() - b), static_cast<double>(data.size()), grads);
  if (!std::isfinite(loss)) throw ConvergenceError("weighted_nll: non-finite loss");
  return loss;
}

inline Eigen::VectorXd log_density_batch(const ConditionalFlow& flow, const Eigen::MatrixXd& x,
                                         const Eigen::MatrixXd& conditions) {
  FlowDataset data{conditions, x, Eigen::VectorXd::Ones(x.cols())};
  const detail::PreparedData p = detail::prepare(flow, data);
  const double log_bins = std::log(static_cast<double>(flow.bins()));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.cols());
  for (int j = 0; j < flow.dim(); ++j) {
    const Eigen::MatrixXd ls = log_softmax_columns(flow.conditioners()[j].forward(flow.conditioner_input(j, p.conditions, p.unit)));
    for (Eigen::Index c = 0; c < x.cols(); ++c) out[c] += log_bins + ls(p.bin(j, c), c);
  }
  return out;
}

// -- training -------------------------------------------------------------------

struct FitConfig {
  AdamConfig adam;
  int batch_size = 256;
  int max_epochs = 1000;
  int min_epochs = 100;
  int patience = 50;
  double validation_fraction = 0.2;
  double lr_decay = 1.0;  // multiplicative learning-rate factor per epoch
  std::uint64_t seed = 0;
  // 0: chronological split. > 0: the records form consecutive blocks of this
  // size and the trailing fraction of every block is held out.
  Eigen::Index validation_block = 0;
};

struct FitReport {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::vector<double> best_so_far;  // running minimum of validation_loss
  int best_epoch = -1;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
};

/// Chronological split: the first (1 - fraction) of the records train.
inline Eigen::Index training_split(Eigen::Index n, double validation_fraction) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in (0, 1)");
  const auto n_train = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * (1.0 - validation_fraction)));
  if (n_train <= 0 || n_train >= n) throw DataError("training split: empty train or validation split");
  return n_train;
}

/// Records at `idx`, in that order.
inline FlowDataset select(const FlowDataset& data, const std::vector<Eigen::Index>& idx) {
  FlowDataset out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.conditions.resize(data.conditions.rows(), n);
  out.targets.resize(data.targets.rows(), n);
  out.weights.resize(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    out.conditions.col(c) = data.conditions.col(idx[c]);
    out.targets.col(c) = data.targets.col(idx[c]);
    out.weights[c] = data.weights[idx[c]];
  }
  return out;
}

/// Train and validation parts of `data` under `cfg`'s split rule.
inline std::pair<FlowDataset, FlowDataset> split_dataset(const FlowDataset& data, const FitConfig& cfg) {
  if (cfg.validation_block <= 0) {
    const Eigen::Index n_train = training_split(data.size(), cfg.validation_fraction);
    return {data.slice(0, n_train), data.slice(n_train, data.size() - n_train)};
  }
  const Eigen::Index block = cfg.validation_block;
  if (data.size() % block != 0) throw DataError("validation split: dataset size is not a multiple of the block size");
  const Eigen::Index keep = training_split(block, cfg.validation_fraction);
  std::vector<Eigen::Index> train, valid;
  for (Eigen::Index b = 0; b < data.size(); b += block)
    for (Eigen::Index r = 0; r < block; ++r) (r < keep ? train : valid).push_back(b + r);
  return {select(data, train), select(data, valid)};
}

/// Minimises weighted_nll with mini-batch Adam and early stopping on the
/// validation split. The flow must already carry its rescaling bounds.
inline FitReport fit_flow(ConditionalFlow& flow, const FlowDataset& data, const FitConfig& cfg) {
  if (data.size() == 0) throw DataError("fit_flow: empty dataset");
  detail::PreparedData train, valid;
  {
    const auto [tr, va] = split_dataset(data, cfg);
    train = detail::prepare(flow, tr);
    valid = detail::prepare(flow, va);
  }
  const auto n_train = static_cast<Eigen::Index>(train.weights.size());
  const int d = flow.dim();

  std::vector<OptimizerState> opt;
  for (int j = 0; j < d; ++j) opt.emplace_back(cfg.adam, flow.conditioners()[j].parameter_count());

  auto full_loss = [&](const detail::PreparedData& p) {
    std::vector<Eigen::Index> idx(p.weights.size());
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    double loss = 0.0;
    const std::size_t chunk = 8192;
    for (std::size_t b = 0; b < idx.size(); b += chunk)
      loss += detail::nll_chunk(flow, p, idx, b, std::min(chunk, idx.size() - b), static_cast<double>(idx.size()), nullptr);
    return loss;
  };

  FitReport report;
  std::vector<Eigen::VectorXd> best_params(d);
  for (int j = 0; j < d; ++j) best_params[j] = flow.conditioners()[j].params();

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(n_train);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<Eigen::VectorXd> grads(d);
  double lr_scale = 1.0;
  const auto bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t count = std::min(bs, order.size() - b);
      for (int j = 0; j < d; ++j) grads[j] = Eigen::VectorXd::Zero(flow.conditioners()[j].parameter_count());
      const double loss = detail::nll_chunk(flow, train, order, b, count, static_cast<double>(count), &grads);
      if (!std::isfinite(loss)) throw ConvergenceError("fit_flow: training loss diverged");
      epoch_loss += loss * static_cast<double>(count);
      double sq = 0.0;
      for (const auto& g : grads) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      const double clip = cfg.adam.clip_norm > 0.0 && norm > cfg.adam.clip_norm ? cfg.adam.clip_norm / norm : 1.0;
      for (int j = 0; j < d; ++j) {
        if (clip != 1.0) grads[j] *= clip;
        adam_step(opt[j], flow.conditioners()[j].params(), grads[j], lr_scale);
      }
    }
    lr_scale *= cfg.lr_decay;
    const double vloss = full_loss(valid);
    if (!std::isfinite(vloss)) throw ConvergenceError("fit_flow: validation loss diverged");
    report.train_loss.push_back(epoch_loss / static_cast<double>(n_train));
    report.validation_loss.push_back(vloss);
    if (vloss < report.best_validation_loss) {
      report.best_validation_loss = vloss;
      report.best_epoch = epoch;
      for (int j = 0; j < d; ++j) best_params[j] = flow.conditioners()[j].params();
    }
    report.best_so_far.push_back(report.best_validation_loss);
    report.epochs_run = epoch + 1;
    if (epoch + 1 >= cfg.min_epochs && epoch - report.best_epoch >= cfg.patience) break;
  }
  for (int j = 0; j < d; ++j) flow.conditioners()[j].params() = best_params[j];
  return report;
}

// -- checkpoints ------------------------------------------------------------

inline nlohmann::json to_json(const ConditionalFlow& flow) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["format"] = "rnsim-flow";
  j["version"] = kCheckpointVersion;
  j["condition_dim"] = flow.condition_dim();
  j["dim"] = flow.dim();
  j["bins"] = flow.bins();
  j["hidden"] = flow.architecture().hidden;
  j["activation"] = to_string(flow.architecture().activation);
  j["lo"] = vec(flow.lo());
  j["hi"] = vec(flow.hi());
  j["condition_lo"] = vec(flow.condition_lo());
  j["condition_hi"] = vec(flow.condition_hi());
  j["conditioners"] = nlohmann::json::array();
  for (const auto& net : flow.conditioners()) j["conditioners"].push_back(to_json(net));
  return j;
}

inline ConditionalFlow flow_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rnsim-flow") throw DataError("checkpoint: not a flow record");
  if (j.value("version", 0) != kCheckpointVersion) throw DataError("checkpoint: unsupported flow version");
  FlowArchitecture arch;
  arch.condition_dim = j.at("condition_dim").get<int>();
  arch.dim = j.at("dim").get<int>();
  arch.bins = j.at("bins").get<int>();
  arch.hidden = j.at("hidden").get<std::vector<int>>();
  arch.activation = activation_from_string(j.at("activation").get<std::string>());
  ConditionalFlow flow(arch, 0);
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  flow.set_bounds(vec(j.at("lo")), vec(j.at("hi")));
  flow.set_condition_bounds(vec(j.at("condition_lo")), vec(j.at("condition_hi")));
  const auto& nets = j.at("conditioners");
  if (static_cast<int>(nets.size()) != arch.dim) throw DataError("checkpoint: conditioner count mismatch");
  for (int d = 0; d < arch.dim; ++d) {
    Mlp net = mlp_from_json(nets[d]);
    if (net.widths() != flow.conditioners()[d].widths()) throw DataError("checkpoint: conditioner shape mismatch");
    flow.conditioners()[d] = std::move(net);
  }
  return flow;
}

}  // namespace rnsim

#endif  // RNSIM_DENSITY_FLOW_HPP
