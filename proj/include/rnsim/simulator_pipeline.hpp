#ifndef RNSIM_SIMULATOR_PIPELINE_HPP
#define RNSIM_SIMULATOR_PIPELINE_HPP

// End-to-end pipeline: compressed history, physical flow p_eta, weighted
// one-step dataset, risk-neutral flow q_theta, path simulation and the
// evaluation statistics (drifts, utility-optimal PnL, weight histograms, KDE).
//
// Flow layout: condition = latent code sigma_t (l values); target =
// (R_{t+1}, sigma_{t+1} - sigma_t). Given the condition the target is a
// bijective reparametrisation of (R_{t+1}, sigma_{t+1}).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rnsim/density_flow.hpp"
#include "rnsim/diffnet.hpp"
#include "rnsim/drift_removal.hpp"
#include "rnsim/errors.hpp"
#include "rnsim/grid_model.hpp"
#include "rnsim/instruments.hpp"
#include "rnsim/manifold_codec.hpp"
#include "rnsim/market_series.hpp"

namespace rnsim {

using Progress = std::function<void(Eigen::Index done, Eigen::Index total)>;

/// Independent generator for stream `t` of a run seeded with `seed`.
inline Rng substream(std::uint64_t seed, std::uint64_t t) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32), 0x5eedu};
  return Rng(seq);
}

/// d x n Latin hypercube sample on [0, 1)^d: every coordinate has exactly one
/// point in each of the n strata.
inline Eigen::MatrixXd latin_hypercube(int d, Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd u(d, n);
  std::vector<Eigen::Index> perm(n);
  for (int r = 0; r < d; ++r) {
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Eigen::Index c = 0; c < n; ++c) u(r, c) = (static_cast<double>(perm[c]) + unif(rng)) / static_cast<double>(n);
  }
  return u;
}

// -- compressed history ---------------------------------------------------------

/// Latent codes of every day, l x T.
inline Eigen::MatrixXd encode_history(const Codec& codec, const MarketSeries& history) {
  return encode_batch(codec, history.dlv_columns());
}

/// Transition records t -> t+1 for t = 0..T-2, unit weights.
inline FlowDataset transition_dataset(const Eigen::MatrixXd& codes, const Eigen::VectorXd& returns) {
  const Eigen::Index n = codes.cols() - 1;
  if (n < 1 || returns.size() != n) throw DataError("transition dataset: need T codes and T-1 returns");
  FlowDataset d;
  d.conditions = codes.leftCols(n);
  d.targets.resize(1 + codes.rows(), n);
  d.targets.row(0) = returns.transpose();
  d.targets.bottomRows(codes.rows()) = codes.rightCols(n) - codes.leftCols(n);
  d.weights = Eigen::VectorXd::Ones(n);
  return d;
}

struct FlowSettings {
  FlowArchitecture arch;
  FitConfig fit;
  double bound_margin = 0.1;  // rescaling range = data range widened by this fraction per side
};

// -- physical model -------------------------------------------------------------

struct PhysicalFit {
  ConditionalFlow flow;
  FitReport report;
  double heldout_nll = 0.0;   // unit-cube NLL on the validation split
  double baseline_nll = 0.0;  // same, for independent per-coordinate histograms
};

/// Unit-cube NLL of a product of per-coordinate histograms fitted on `train`
/// (add-half smoothing), evaluated on `test`.
inline double histogram_baseline_nll(const ConditionalFlow& flow, const FlowDataset& train, const FlowDataset& test) {
  const int b = flow.bins();
  double nll = 0.0;
  for (int j = 0; j < flow.dim(); ++j) {
    Eigen::VectorXd counts = Eigen::VectorXd::Constant(b, 0.5);
    for (Eigen::Index c = 0; c < train.size(); ++c) {
      const double u = (train.targets(j, c) - flow.lo()[j]) / (flow.hi()[j] - flow.lo()[j]);
      counts[BinDensity::bin_of(u, b)] += 1.0;
    }
    counts /= counts.sum();
    for (Eigen::Index c = 0; c < test.size(); ++c) {
      const double u = (test.targets(j, c) - flow.lo()[j]) / (flow.hi()[j] - flow.lo()[j]);
      nll -= std::log(b * counts[BinDensity::bin_of(u, b)]);
    }
  }
  return nll / static_cast<double>(test.size());
}

inline void check_history(const MarketSeries& history) {
  history.validate();
  for (Eigen::Index t = 0; t < history.size(); ++t) {
    const auto v = check_static_arbitrage(history.prices[t]);
    if (!v.empty()) {
      std::ostringstream os;
      os << "history row " << t << " (" << history.dates[t] << "): static arbitrage, " << to_string(v.front().kind)
         << " at maturity index " << v.front().maturity_index << ", strike index " << v.front().strike_index;
      throw ArbitrageError(os.str());
    }
  }
}

inline void check_flow_layout(const FlowArchitecture& arch, int latent_dim) {
  if (arch.condition_dim != latent_dim || arch.dim != 1 + latent_dim) {
    std::ostringstream os;
    os << "flow layout: latent dimension " << latent_dim << " needs condition_dim " << latent_dim << " and dim "
       << 1 + latent_dim << ", got " << arch.condition_dim << " and " << arch.dim;
    throw ConfigError(os.str());
  }
}

inline PhysicalFit fit_physical(const MarketSeries& history, const Codec& codec, const FlowSettings& settings,
                                std::uint64_t seed) {
  check_history(history);
  check_flow_layout(settings.arch, codec.latent_dim());
  const Eigen::MatrixXd codes = encode_history(codec, history);
  const FlowDataset data = transition_dataset(codes, history.returns());
  PhysicalFit out;
  out.flow = ConditionalFlow(settings.arch, seed);
  const auto [lo, hi] = padded_bounds(data.targets, settings.bound_margin);
  out.flow.set_bounds(lo, hi);
  const auto [clo, chi] = padded_bounds(codes, settings.bound_margin);
  out.flow.set_condition_bounds(clo, chi);
  FitConfig fit = settings.fit;
  fit.seed = seed;
  out.report = fit_flow(out.flow, data, fit);
  const Eigen::Index split = training_split(data.size(), fit.validation_fraction);
  const FlowDataset train = data.slice(0, split), valid = data.slice(split, data.size() - split);
  out.heldout_nll = weighted_nll(out.flow, valid);
  out.baseline_nll = histogram_baseline_nll(out.flow, train, valid);
  return out;
}

// -- one-step scenarios ---------------------------------------------------------

struct OneStepSample {
  Eigen::MatrixXd targets;         // d x n flow samples
  Eigen::MatrixXd gains;           // n x D instrument changes
  Eigen::VectorXd current_prices;  // D
};

/// Draws n transitions from `model` at latent code `code` (Latin hypercube
/// uniforms) and revalues every instrument on the decoded next-day grids.
inline OneStepSample sample_one_step(const ConditionalFlow& model, const Codec& codec, const Eigen::VectorXd& code,
                                     const InstrumentSet& instruments, Eigen::Index n, Rng& rng) {
  const int l = codec.latent_dim();
  if (code.size() != l || model.condition_dim() != l) throw std::invalid_argument("sample_one_step: code size");
  OneStepSample out;
  const Eigen::MatrixXd uniforms = latin_hypercube(model.dim(), n, rng);
  const Eigen::MatrixXd conditions = code.replicate(1, n);
  out.targets = sample_batch(model, conditions, uniforms);
  const PriceGrid now = price_from_dlv(decode(codec, code));
  out.current_prices = instrument_prices(instruments, now);
  bool need_grid = false;
  for (const auto& x : instruments.items) need_grid |= !x.is_spot;
  Eigen::MatrixXd dlvs;
  if (need_grid) dlvs = decode_batch(codec, (out.targets.bottomRows(l).colwise() + code).eval());
  const GridSpecPtr& spec = codec.spec();
  out.gains.resize(n, instruments.size());
  std::vector<double> row(instruments.size());
  PriceGrid next{spec, Eigen::MatrixXd()};
  for (Eigen::Index s = 0; s < n; ++s) {
    const double ratio = 1.0 + out.targets(0, s);
    if (!(ratio > 0.0)) throw DataError("sample_one_step: simulated return below -100%");
    if (need_grid) next = price_from_dlv(DlvGrid(spec, unflatten(dlvs.col(s), spec->m(), spec->n())));
    instrument_changes(instruments, out.current_prices, ratio, next, row.data());
    for (int a = 0; a < instruments.size(); ++a) out.gains(s, a) = row[a];
  }
  return out;
}

// -- weighted dataset (drift removal over all conditions) ------------------------

struct DatasetSettings {
  Eigen::Index samples_per_condition = 1024;
  double risk_aversion = 1.0;
  NewtonOptions newton;
  double max_skip_fraction = 0.01;
};

struct ConditionDiagnostics {
  Eigen::Index condition = 0;  // column of the condition matrix
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double max_reweighted_drift = 0.0;  // max_a |mean_j w_j dx_ja|
  double mean_weight = 0.0;
  double min_weight = 0.0;
  Eigen::VectorXd action;
  std::string message;
};

struct WeightedDataset {
  FlowDataset data;
  Eigen::Index samples_per_condition = 0;
  std::vector<ConditionDiagnostics> diagnostics;
  Eigen::Index skipped = 0;
};

/// Samples N transitions from p_eta at every condition, solves the
/// exponential-utility problem on their instrument changes and attaches the
/// change-of-measure weights. Records are ordered by condition.
inline WeightedDataset build_weighted_dataset(const ConditionalFlow& physical, const Codec& codec,
                                              const Eigen::MatrixXd& conditions, const InstrumentSet& instruments,
                                              const DatasetSettings& settings, std::uint64_t seed,
                                              const Progress& progress = {}) {
  instruments.validate(*codec.spec());
  const Eigen::Index n = settings.samples_per_condition, t_count = conditions.cols();
  if (n < 2) throw ConfigError("weighted dataset: need at least two samples per condition");
  if (t_count < 1) throw DataError("weighted dataset: no conditions");
  WeightedDataset out;
  out.samples_per_condition = n;
  out.data.conditions.resize(physical.condition_dim(), n * t_count);
  out.data.targets.resize(physical.dim(), n * t_count);
  out.data.weights.resize(n * t_count);
  Eigen::Index filled = 0;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(t));
    const Eigen::VectorXd code = conditions.col(t);
    const OneStepSample s = sample_one_step(physical, codec, code, instruments, n, rng);
    ConditionDiagnostics diag;
    diag.condition = t;
    try {
      MeasureChange mc = solve_optimal_action(s.gains, settings.risk_aversion, settings.newton);
      compute_weights(s.gains, mc);
      diag.iterations = mc.iterations;
      diag.gradient_norm = mc.gradient_norm;
      diag.action = mc.action;
      diag.mean_weight = mc.weights.mean();
      diag.min_weight = mc.weights.minCoeff();
      diag.max_reweighted_drift =
          (s.gains.transpose() * mc.weights / static_cast<double>(n)).cwiseAbs().maxCoeff();
      if (!(diag.min_weight > 0.0)) throw ConvergenceError("weights underflowed to zero");
      diag.converged = true;
      out.data.conditions.middleCols(filled, n) = code.replicate(1, n);
      out.data.targets.middleCols(filled, n) = s.targets;
      out.data.weights.segment(filled, n) = mc.weights;
      filled += n;
    } catch (const ConvergenceError& e) {
      diag.message = e.what();
      ++out.skipped;
    }
    out.diagnostics.push_back(std::move(diag));
    if (progress) progress(t + 1, t_count);
  }
  out.data.conditions.conservativeResize(Eigen::NoChange, filled);
  out.data.targets.conservativeResize(Eigen::NoChange, filled);
  out.data.weights.conservativeResize(filled);
  if (static_cast<double>(out.skipped) > settings.max_skip_fraction * static_cast<double>(t_count)) {
    std::ostringstream os;
    os << "weighted dataset: " << out.skipped << " of " << t_count << " conditions failed to converge (limit "
       << settings.max_skip_fraction * 100.0 << "%)";
    for (const auto& d : out.diagnostics)
      if (!d.converged) {
        os << "; first failure at condition " << d.condition << ": " << d.message;
        break;
      }
    throw ConvergenceError(os.str());
  }
  return out;
}

// -- risk-neutral model ---------------------------------------------------------

struct RiskNeutralFit {
  ConditionalFlow flow;
  FitReport report;
};

/// Trains q_theta on the weighted dataset with the architecture and rescaling
/// ranges of p_eta. With `warm_start` the conditioners start from p_eta's
/// parameters instead of a fresh initialisation.
inline RiskNeutralFit fit_risk_neutral(const FlowDataset& data, const ConditionalFlow& physical,
                                       const FlowSettings& settings, std::uint64_t seed, bool warm_start = false) {
  if (!(physical.architecture().dim == settings.arch.dim &&
        physical.architecture().condition_dim == settings.arch.condition_dim &&
        physical.architecture().bins == settings.arch.bins && physical.architecture().hidden == settings.arch.hidden))
    throw ConfigError("risk-neutral flow: architecture differs from the physical flow");
  RiskNeutralFit out;
  out.flow = ConditionalFlow(settings.arch, seed);
  out.flow.set_bounds(physical.lo(), physical.hi());
  out.flow.set_condition_bounds(physical.condition_lo(), physical.condition_hi());
  if (warm_start)
    for (int j = 0; j < physical.dim(); ++j) out.flow.conditioners()[j].params() = physical.conditioners()[j].params();
  FitConfig fit = settings.fit;
  fit.seed = seed;
  out.report = fit_flow(out.flow, data, fit);
  return out;
}

/// As above; every condition keeps its first samples for training and holds
/// out the rest, so no state is missing from either split.
inline RiskNeutralFit fit_risk_neutral(const WeightedDataset& dataset, const ConditionalFlow& physical,
                                       const FlowSettings& settings, std::uint64_t seed, bool warm_start = false) {
  FlowSettings s = settings;
  s.fit.validation_block = dataset.samples_per_condition;
  return fit_risk_neutral(dataset.data, physical, s, seed, warm_start);
}

// -- simulation -------------------------------------------------------------------

struct SimulatedPaths {
  Eigen::MatrixXd spots;             // n_paths x (horizon + 1)
  std::vector<Eigen::MatrixXd> codes;  // horizon + 1 entries of l x n_paths
  Eigen::Index out_of_range_codes = 0;  // sampled codes outside the codec's validated range
};

inline SimulatedPaths simulate(const ConditionalFlow& model, const Codec& codec, const MarketState& start, int horizon,
                               Eigen::Index n_paths, std::uint64_t seed) {
  if (horizon < 1 || n_paths < 1) throw ConfigError("simulate: horizon and path count must be positive");
  const auto violations = check_static_arbitrage(start.prices);
  if (!violations.empty()) throw ArbitrageError("simulate: start state has static arbitrage");
  const Eigen::VectorXd code0 = encode(codec, dlv_from_price(start.prices));
  const int l = codec.latent_dim();
  SimulatedPaths out;
  out.spots.resize(n_paths, horizon + 1);
  out.spots.col(0).setConstant(start.spot);
  out.codes.push_back(code0.replicate(1, n_paths));
  for (int h = 1; h <= horizon; ++h) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(h));
    const Eigen::MatrixXd u = latin_hypercube(model.dim(), n_paths, rng);
    const Eigen::MatrixXd x = sample_batch(model, out.codes.back(), u);
    Eigen::MatrixXd next = out.codes.back() + x.bottomRows(l);
    for (Eigen::Index p = 0; p < n_paths; ++p) {
      const double ratio = 1.0 + x(0, p);
      if (!(ratio > 0.0)) throw DataError("simulate: simulated return below -100%");
      out.spots(p, h) = out.spots(p, h - 1) * ratio;
      if (!codec.in_validated_range(next.col(p))) ++out.out_of_range_codes;
    }
    out.codes.push_back(std::move(next));
  }
  return out;
}

// -- evaluation ---------------------------------------------------------------

struct InstrumentDrift {
  std::string name;
  double price = 0.0;
  double p_drift = 0.0, q_drift = 0.0;  // absolute per step, units of spot
  double p_se = 0.0, q_se = 0.0;        // Monte Carlo standard errors (iid approximation)
  double p_pct = 0.0, q_pct = 0.0;      // drift / price * 100
  double ratio = 0.0;                   // |p_pct| / |q_pct|; infinity when q_pct == 0
  double p_std = 0.0, q_std = 0.0;      // one-step standard deviation of the change
};

struct DriftReport {
  Eigen::Index condition = 0;
  Eigen::Index samples = 0;
  std::uint64_t seed = 0;
  std::vector<InstrumentDrift> rows;
  Eigen::VectorXd code_shift;     // mean latent increment under q minus under p
  Eigen::VectorXd code_shift_se;  // its Monte Carlo standard error
};

inline void mean_and_se(const Eigen::VectorXd& v, double& mean, double& se, double& sd) {
  const double n = static_cast<double>(v.size());
  mean = v.mean();
  sd = std::sqrt((v.array() - mean).square().sum() / std::max(1.0, n - 1.0));
  se = sd / std::sqrt(n);
}

inline DriftReport drift_report_from_gains(const InstrumentSet& instruments, const Eigen::VectorXd& prices,
                                           const Eigen::MatrixXd& p_gains, const Eigen::MatrixXd& q_gains) {
  DriftReport r;
  r.samples = p_gains.rows();
  for (int a = 0; a < instruments.size(); ++a) {
    InstrumentDrift d;
    d.name = instruments.items[a].name();
    d.price = prices[a];
    mean_and_se(p_gains.col(a), d.p_drift, d.p_se, d.p_std);
    mean_and_se(q_gains.col(a), d.q_drift, d.q_se, d.q_std);
    d.p_pct = d.p_drift / d.price * 100.0;
    d.q_pct = d.q_drift / d.price * 100.0;
    d.ratio = d.q_pct != 0.0 ? std::abs(d.p_pct) / std::abs(d.q_pct) : std::numeric_limits<double>::infinity();
    r.rows.push_back(std::move(d));
  }
  return r;
}

/// Latent coordinates (rows 1.. of the flow targets) are not traded; the
/// change of measure should leave their means nearly unchanged.
inline void add_code_shift(DriftReport& r, const Eigen::MatrixXd& p_targets, const Eigen::MatrixXd& q_targets) {
  const Eigen::Index l = p_targets.rows() - 1;
  r.code_shift.resize(l);
  r.code_shift_se.resize(l);
  for (Eigen::Index k = 0; k < l; ++k) {
    double mp, sp, dp, mq, sq, dq;
    mean_and_se(p_targets.row(k + 1).transpose(), mp, sp, dp);
    mean_and_se(q_targets.row(k + 1).transpose(), mq, sq, dq);
    r.code_shift[k] = mq - mp;
    r.code_shift_se[k] = std::hypot(sp, sq);
  }
}

/// Monte Carlo one-step drift of every instrument under p_eta and q_theta at
/// latent code `code`; both models share the same uniforms.
inline DriftReport evaluate_drift(const ConditionalFlow& physical, const ConditionalFlow& risk_neutral,
                                  const Codec& codec, const Eigen::VectorXd& code, const InstrumentSet& instruments,
                                  Eigen::Index n, std::uint64_t seed) {
  instruments.validate(*codec.spec());
  Rng r1 = substream(seed, 0), r2 = substream(seed, 0);
  const OneStepSample p = sample_one_step(physical, codec, code, instruments, n, r1);
  const OneStepSample q = sample_one_step(risk_neutral, codec, code, instruments, n, r2);
  DriftReport r = drift_report_from_gains(instruments, p.current_prices, p.gains, q.gains);
  add_code_shift(r, p.targets, q.targets);
  r.seed = seed;
  return r;
}

struct PnlResult {
  Eigen::VectorXd action;
  double expected_utility = 0.0;
  double certainty_equivalent = 0.0;  // u^{-1}(E u(a* . dX))
  int iterations = 0;
  Eigen::VectorXd spot_move;  // R_{t+1}
  Eigen::VectorXd pnl;        // a* . dX_{t+1}
};

/// Utility-optimal one-step trade on the instruments under `model`.
inline PnlResult pnl_from_gains(const Eigen::MatrixXd& gains, const Eigen::VectorXd& spot_move, double risk_aversion,
                                const NewtonOptions& newton = {}) {
  const MeasureChange mc = solve_optimal_action(gains, risk_aversion, newton);
  PnlResult r;
  r.action = mc.action;
  r.iterations = mc.iterations;
  // E u(G) = (1 - L(a*)) / lambda and u^{-1}(E u) = -log L(a*) / lambda.
  r.expected_utility = -std::expm1(mc.log_loss) / risk_aversion;
  r.certainty_equivalent = -mc.log_loss / risk_aversion;
  r.spot_move = spot_move;
  r.pnl = mc.gains;
  return r;
}

inline PnlResult evaluate_pnl(const ConditionalFlow& model, const Codec& codec, const Eigen::VectorXd& code,
                              double risk_aversion, const InstrumentSet& instruments, Eigen::Index n,
                              std::uint64_t seed, const NewtonOptions& newton = {}) {
  instruments.validate(*codec.spec());
  Rng rng = substream(seed, 0);
  const OneStepSample s = sample_one_step(model, codec, code, instruments, n, rng);
  return pnl_from_gains(s.gains, s.targets.row(0).transpose(), risk_aversion, newton);
}

/// Last state plus `random_count` distinct earlier states, drawn with `seed`.
inline std::vector<Eigen::Index> evaluation_conditions(Eigen::Index t_count, int random_count, std::uint64_t seed) {
  if (t_count < 1) throw DataError("evaluation conditions: empty history");
  std::vector<Eigen::Index> pool(t_count - 1);
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  Rng rng = substream(seed, 0);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<Eigen::Index> out{t_count - 1};
  for (int i = 0; i < random_count && i < static_cast<int>(pool.size()); ++i) out.push_back(pool[i]);
  return out;
}

// -- descriptive statistics ---------------------------------------------------

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<double> counts;
};

inline Histogram histogram(const Eigen::VectorXd& values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw ConfigError("histogram: invalid bins or range");
  Histogram h;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  h.counts.assign(bins, 0.0);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double u = (values[i] - lo) / (hi - lo);
    if (u < 0.0 || u > 1.0) continue;
    h.counts[std::min(bins - 1, static_cast<int>(u * bins))] += 1.0;
  }
  return h;
}

struct Kde2 {
  Eigen::VectorXd xs, ys;   // lattice axes
  Eigen::MatrixXd density;  // density(i, j) at (xs[i], ys[j])
  double hx = 0.0, hy = 0.0;
};

/// Product Gaussian kernel estimate with Scott's bandwidth sd * n^(-1/6) on a
/// lattice x lattice grid covering the data plus `pad` bandwidths.
inline Kde2 kde2(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int lattice = 64, double pad = 3.0) {
  const Eigen::Index n = x.size();
  if (y.size() != n) throw std::invalid_argument("kde2: sample size mismatch");
  if (n < 100) throw DataError("kde2: need at least 100 samples");
  if (lattice < 2) throw ConfigError("kde2: lattice must have at least two points");
  auto sd = [](const Eigen::VectorXd& v) {
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
  };
  Kde2 k;
  const double scott = std::pow(static_cast<double>(n), -1.0 / 6.0);
  k.hx = sd(x) * scott;
  k.hy = sd(y) * scott;
  if (!(k.hx > 0.0) || !(k.hy > 0.0)) throw DataError("kde2: degenerate (zero-variance) dimension");
  k.xs = Eigen::VectorXd::LinSpaced(lattice, x.minCoeff() - pad * k.hx, x.maxCoeff() + pad * k.hx);
  k.ys = Eigen::VectorXd::LinSpaced(lattice, y.minCoeff() - pad * k.hy, y.maxCoeff() + pad * k.hy);
  auto kernel = [n, lattice](const Eigen::VectorXd& axis, const Eigen::VectorXd& v, double h) {
    Eigen::MatrixXd m(lattice, n);
    const double c = 1.0 / (std::sqrt(2.0 * M_PI) * h);
    for (Eigen::Index s = 0; s < n; ++s)
      for (int i = 0; i < lattice; ++i) {
        const double z = (axis[i] - v[s]) / h;
        m(i, s) = c * std::exp(-0.5 * z * z);
      }
    return m;
  };
  const Eigen::MatrixXd kx = kernel(k.xs, x, k.hx), ky = kernel(k.ys, y, k.hy);
  k.density = kx * ky.transpose() / static_cast<double>(n);
  return k;
}

}  // namespace rnsim

#endif  // RNSIM_SIMULATOR_PIPELINE_HPP
