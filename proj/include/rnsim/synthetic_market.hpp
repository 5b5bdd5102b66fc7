#ifndef RNSIM_SYNTHETIC_MARKET_HPP
#define RNSIM_SYNTHETIC_MARKET_HPP

// Synthetic ground-truth market: three mean-reverting latent factors drive
// log-DLVs (level, skew, term slope); daily spot returns have a volatility
// proportional to the short ATM DLV. With a multiplier above one the spot
// realises more variance than the options imply.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rnsim/errors.hpp"
#include "rnsim/grid_model.hpp"
#include "rnsim/instruments.hpp"
#include "rnsim/market_series.hpp"

namespace rnsim {

struct SyntheticMarketConfig {
  int horizon = 2500;  // number of days generated
  std::uint64_t seed = 1;

  // log DLV(tau, k) = log(base) + z0 + (skew + z1) x + (term + z2) (tau / pivot - 1) + curvature x^2,
  // x = log k
  double base_level = 0.215;
  double skew = -0.8;
  double term_slope = 0.05;
  double curvature = 1.0;
  double term_pivot = 90.0;

  // Daily AR(1) dynamics z' = (1 - kappa) z + vol * eps.
  std::array<double, 3> mean_reversion{0.02, 0.05, 0.05};
  std::array<double, 3> factor_vol{0.07, 0.035, 0.105};

  double spot_drift = 0.0005;              // mu per day
  double realized_vol_multiplier = 1.19;   // realised vol / short ATM DLV
  double spot_level_correlation = 0.0;     // corr(spot shock, level factor shock)
  double initial_spot = 1.0;

  void validate() const {
    if (horizon < 2) throw ConfigError("synthetic: horizon must be >= 2");
    if (!(base_level > 0.0)) throw ConfigError("synthetic: base level must be positive");
    if (!(realized_vol_multiplier > 0.0)) throw ConfigError("synthetic: realized vol multiplier must be positive");
    if (!(initial_spot > 0.0)) throw ConfigError("synthetic: initial spot must be positive");
    if (!(term_pivot > 0.0)) throw ConfigError("synthetic: term pivot must be positive");
    if (!(std::abs(spot_level_correlation) <= 1.0)) throw ConfigError("synthetic: correlation must lie in [-1, 1]");
    for (int f = 0; f < 3; ++f) {
      if (!(mean_reversion[f] >= 0.0 && mean_reversion[f] < 2.0))
        throw ConfigError("synthetic: mean reversion must lie in [0, 2)");
      if (!(factor_vol[f] >= 0.0)) throw ConfigError("synthetic: factor vol must be non-negative");
    }
  }
};

inline DlvGrid synthetic_dlv(const GridSpecPtr& spec, const SyntheticMarketConfig& cfg, const Eigen::Vector3d& z) {
  Eigen::MatrixXd v(spec->m(), spec->n());
  for (int i = 0; i < spec->m(); ++i) {
    const double term = (cfg.term_slope + z[2]) * (spec->maturities[i] / cfg.term_pivot - 1.0);
    for (int j = 0; j < spec->n(); ++j) {
      const double x = std::log(spec->strikes[j]);
      v(i, j) = std::exp(std::log(cfg.base_level) + z[0] + (cfg.skew + z[1]) * x + term + cfg.curvature * x * x);
    }
  }
  return DlvGrid(spec, std::move(v));
}

/// Daily standard deviation of the next spot return.
inline double synthetic_return_vol(const SyntheticMarketConfig& cfg, const DlvGrid& dlv) {
  const GridSpec& spec = *dlv.spec;
  return cfg.realized_vol_multiplier * dlv.values(0, spec.atm_index()) / std::sqrt(spec.day_count);
}

/// One transition of the generator from factor state z: returns (R, z').
struct SyntheticStep {
  double ret;
  Eigen::Vector3d z;
};

inline SyntheticStep synthetic_step(const SyntheticMarketConfig& cfg, const Eigen::Vector3d& z, double vol,
                                    double eps_spot, const Eigen::Vector3d& eps_factor) {
  SyntheticStep s;
  s.ret = cfg.spot_drift + vol * eps_spot;
  const double rho = cfg.spot_level_correlation;
  for (int f = 0; f < 3; ++f) {
    double e = eps_factor[f];
    if (f == 0) e = rho * eps_spot + std::sqrt(1.0 - rho * rho) * e;
    s.z[f] = (1.0 - cfg.mean_reversion[f]) * z[f] + cfg.factor_vol[f] * e;
  }
  return s;
}

/// `factors`, when given, receives the latent factor state of every day.
inline MarketSeries synth_generate(const GridSpecPtr& spec, const SyntheticMarketConfig& cfg,
                                   std::vector<Eigen::Vector3d>* factors = nullptr) {
  cfg.validate();
  MarketSeries out;
  out.spec = spec;
  out.dates = business_days(cfg.horizon);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01;
  Eigen::Vector3d z = Eigen::Vector3d::Zero();
  double spot = cfg.initial_spot;
  if (factors) factors->clear();
  for (int t = 0; t < cfg.horizon; ++t) {
    if (factors) factors->push_back(z);
    DlvGrid dlv = synthetic_dlv(spec, cfg, z);
    out.prices.push_back(price_from_dlv(dlv));
    out.spots.push_back(spot);
    const double vol = synthetic_return_vol(cfg, dlv);
    out.dlvs.push_back(std::move(dlv));
    const double es = n01(rng);
    Eigen::Vector3d ef;
    for (int f = 0; f < 3; ++f) ef[f] = n01(rng);
    const SyntheticStep s = synthetic_step(cfg, z, vol, es, ef);
    if (!(1.0 + s.ret > 0.0)) throw DataError("synthetic: generated a return below -100%");
    spot *= 1.0 + s.ret;
    z = s.z;
  }
  return out;
}

/// Monte Carlo one-step instrument changes under the generator itself,
/// starting from factor state z (N x D, units of the current spot).
inline Eigen::MatrixXd synthetic_gains(const GridSpecPtr& spec, const SyntheticMarketConfig& cfg,
                                       const Eigen::Vector3d& z, const InstrumentSet& instruments, int n,
                                       std::uint64_t seed) {
  const DlvGrid dlv = synthetic_dlv(spec, cfg, z);
  const PriceGrid now = price_from_dlv(dlv);
  const Eigen::VectorXd current = instrument_prices(instruments, now);
  const double vol = synthetic_return_vol(cfg, dlv);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd dx(n, instruments.size());
  std::vector<double> row(instruments.size());
  for (int s = 0; s < n; ++s) {
    const double es = n01(rng);
    Eigen::Vector3d ef;
    for (int f = 0; f < 3; ++f) ef[f] = n01(rng);
    const SyntheticStep st = synthetic_step(cfg, z, vol, es, ef);
    const PriceGrid next = price_from_dlv(synthetic_dlv(spec, cfg, st.z));
    instrument_changes(instruments, current, 1.0 + st.ret, next, row.data());
    for (int a = 0; a < instruments.size(); ++a) dx(s, a) = row[a];
  }
  return dx;
}

}  // namespace rnsim

#endif  // RNSIM_SYNTHETIC_MARKET_HPP
