#ifndef RNSIM_GRID_MODEL_HPP
#define RNSIM_GRID_MODEL_HPP

// Arbitrage-free option grid on a floating (time-to-maturity, relative strike)
// lattice, parametrised by discrete local volatilities (DLVs).
//
// Prices are normalised call prices for the payoff (S_{t+tau}/S_t - k)^+ with
// zero rates, so the forward is one. The map DLV -> price runs an implicit
// discrete Dupire scheme from the tau = 0 intrinsic layer through every
// maturity pillar. Boundary strikes are pinned to intrinsic value.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rnsim/errors.hpp"

namespace rnsim {

/// Relative strikes 0.70, 0.75, ..., 1.30.
inline std::vector<double> default_strikes() {
  std::vector<double> k;
  for (int i = 0; i <= 12; ++i) k.push_back(0.70 + 0.05 * i);
  // Snap to the decimal grid so that the ATM pillar is exactly 1.0.
  for (double& v : k) v = std::round(v * 100.0) / 100.0;
  return k;
}

struct GridSpec {
  std::vector<double> maturities{60.0, 120.0};  // business days
  std::vector<double> strikes = default_strikes();
  double low_boundary_strike = 0.4;
  double high_boundary_strike = 1.6;
  double day_count = 252.0;
  int substeps = 8;  // implicit sub-steps per maturity interval

  int m() const { return static_cast<int>(maturities.size()); }
  int n() const { return static_cast<int>(strikes.size()); }
  int size() const { return m() * n(); }

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("grid spec: " + what); };
    if (maturities.empty()) fail("no maturities");
    if (strikes.size() < 2) fail("need at least two strikes");
    if (maturities.front() < 1.0) fail("maturities must be >= 1 day");
    for (std::size_t i = 1; i < maturities.size(); ++i)
      if (!(maturities[i] > maturities[i - 1])) fail("maturities not strictly increasing");
    if (!(strikes.front() > 0.0)) fail("strikes must be positive");
    for (std::size_t j = 1; j < strikes.size(); ++j)
      if (!(strikes[j] > strikes[j - 1])) fail("strikes not strictly increasing");
    if (!(low_boundary_strike > 0.0 && low_boundary_strike < strikes.front()))
      fail("low boundary strike must lie in (0, min strike)");
    if (!(high_boundary_strike > strikes.back())) fail("high boundary strike must exceed max strike");
    if (atm_index() < 0) fail("strike 1.0 (ATM pillar) missing");
    if (!(day_count > 0.0)) fail("day count must be positive");
    if (substeps < 1) fail("substeps must be >= 1");
  }

  int atm_index() const {
    for (int j = 0; j < n(); ++j)
      if (std::abs(strikes[j] - 1.0) < 1e-12) return j;
    return -1;
  }

  /// Strikes with the two boundary strikes attached.
  std::vector<double> augmented_strikes() const {
    std::vector<double> k;
    k.reserve(strikes.size() + 2);
    k.push_back(low_boundary_strike);
    k.insert(k.end(), strikes.begin(), strikes.end());
    k.push_back(high_boundary_strike);
    return k;
  }

  /// Maturities with the tau = 0 intrinsic layer attached.
  std::vector<double> augmented_maturities() const {
    std::vector<double> t;
    t.reserve(maturities.size() + 1);
    t.push_back(0.0);
    t.insert(t.end(), maturities.begin(), maturities.end());
    return t;
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

using GridSpecPtr = std::shared_ptr<const GridSpec>;

inline GridSpecPtr make_grid_spec(GridSpec spec) {
  spec.validate();
  return std::make_shared<const GridSpec>(std::move(spec));
}

inline double intrinsic(double k) { return std::max(1.0 - k, 0.0); }

/// m x n matrix of strictly positive annualised discrete local volatilities.
struct DlvGrid {
  GridSpecPtr spec;
  Eigen::MatrixXd values;

  DlvGrid() = default;
  DlvGrid(GridSpecPtr s, Eigen::MatrixXd v) : spec(std::move(s)), values(std::move(v)) { validate(); }

  void validate() const {
    if (!spec) throw DataError("dlv grid: missing grid spec");
    if (values.rows() != spec->m() || values.cols() != spec->n())
      throw DataError("dlv grid: shape does not match grid spec");
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      for (Eigen::Index j = 0; j < values.cols(); ++j)
        if (!(values(i, j) > 0.0) || !std::isfinite(values(i, j))) {
          std::ostringstream os;
          os << "dlv grid: entry (" << i << "," << j << ") = " << values(i, j) << " is not positive and finite";
          throw DataError(os.str());
        }
  }
};

/// m x n matrix of normalised call prices on the floating grid.
struct PriceGrid {
  GridSpecPtr spec;
  Eigen::MatrixXd values;
};

struct MarketState {
  double spot = 1.0;
  PriceGrid prices;
};

namespace detail {

// Three-point second difference on the augmented strike lattice, evaluated at
// the interior strikes: (d2 f)_j = lo_j f_{j-1} - (lo_j + up_j) f_j + up_j f_{j+1}.
struct StrikeStencil {
  std::vector<double> k;       // augmented strikes, size n + 2
  std::vector<double> lo, up;  // size n
  std::vector<double> payoff;  // intrinsic on augmented strikes
  std::vector<double> payoff_d2;  // second difference of the intrinsic at interior nodes

  explicit StrikeStencil(const GridSpec& spec) : k(spec.augmented_strikes()) {
    const int n = spec.n();
    lo.resize(n);
    up.resize(n);
    payoff.resize(n + 2);
    payoff_d2.resize(n);
    for (int j = 0; j < n + 2; ++j) payoff[j] = intrinsic(k[j]);
    for (int j = 0; j < n; ++j) {
      const double hm = k[j + 1] - k[j];
      const double hp = k[j + 2] - k[j + 1];
      const double c = 2.0 / (hm + hp);
      lo[j] = c / hm;
      up[j] = c / hp;
      // Slopes of (1-k)^+ on the two adjacent segments, computed without
      // cancellation: -1 below the kink, 0 above, exact chord when straddling.
      auto slope = [](double a, double b) {
        if (b <= 1.0) return -1.0;
        if (a >= 1.0) return 0.0;
        return -(1.0 - a) / (b - a);
      };
      payoff_d2[j] = c * (slope(k[j + 1], k[j + 2]) - slope(k[j], k[j + 1]));
    }
  }
};

// Factorised tridiagonal system (I - a * d2) with zero Dirichlet boundaries.
// Diagonally dominant M-matrix for a >= 0, so Thomas elimination is stable.
class ImplicitStep {
 public:
  ImplicitStep(const StrikeStencil& st, const double* a) {
    const std::size_t n = st.lo.size();
    sub_.resize(n);
    cp_.resize(n);
    inv_den_.resize(n);
    double prev_cp = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double sub = -a[j] * st.lo[j];
      const double sup = -a[j] * st.up[j];
      const double diag = 1.0 + a[j] * (st.lo[j] + st.up[j]);
      const double den = diag - (j > 0 ? sub * prev_cp : 0.0);
      if (!(den > 0.0) || !std::isfinite(den))
        throw DataError("implicit dupire step: tridiagonal solve failed (ill-formed grid spec)");
      sub_[j] = sub;
      inv_den_[j] = 1.0 / den;
      cp_[j] = sup * inv_den_[j];
      prev_cp = cp_[j];
    }
  }

  // Solves in place.
  void solve(double* x) const {
    const std::size_t n = cp_.size();
    x[0] *= inv_den_[0];
    for (std::size_t j = 1; j < n; ++j) x[j] = (x[j] - sub_[j] * x[j - 1]) * inv_den_[j];
    for (std::size_t j = n - 1; j-- > 0;) x[j] -= cp_[j] * x[j + 1];
  }

 private:
  std::vector<double> sub_, cp_, inv_den_;
};

// One maturity layer: excess (time value) e_prev -> e_next with DLV row sigma.
inline void advance_layer(const StrikeStencil& st, const GridSpec& spec, double dt_years, const double* sigma,
                          double* e) {
  const int n = spec.n();
  const double h = dt_years / spec.substeps;
  std::vector<double> a(n);
  for (int j = 0; j < n; ++j) {
    const double kj = st.k[j + 1];
    a[j] = 0.5 * sigma[j] * sigma[j] * kj * kj * h;
  }
  ImplicitStep step(st, a.data());
  for (int s = 0; s < spec.substeps; ++s) {
    for (int j = 0; j < n; ++j) e[j] += a[j] * st.payoff_d2[j];
    step.solve(e);
  }
}

inline double year_fraction(const GridSpec& spec, int layer) {
  const double prev = layer == 0 ? 0.0 : spec.maturities[layer - 1];
  return (spec.maturities[layer] - prev) / spec.day_count;
}

}  // namespace detail

/// Maps a DLV grid to its unique arbitrage-free price grid.
inline PriceGrid price_from_dlv(const DlvGrid& dlv) {
  dlv.validate();
  const GridSpec& spec = *dlv.spec;
  const detail::StrikeStencil st(spec);
  const int m = spec.m(), n = spec.n();
  PriceGrid out{dlv.spec, Eigen::MatrixXd(m, n)};
  std::vector<double> e(n, 0.0), sigma(n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) sigma[j] = dlv.values(i, j);
    detail::advance_layer(st, spec, detail::year_fraction(spec, i), sigma.data(), e.data());
    for (int j = 0; j < n; ++j) out.values(i, j) = st.payoff[j + 1] + e[j];
  }
  return out;
}

enum class ViolationKind { lower_bound, upper_bound, calendar, strike_monotonicity, convexity };

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::lower_bound: return "lower_bound";
    case ViolationKind::upper_bound: return "upper_bound";
    case ViolationKind::calendar: return "calendar";
    case ViolationKind::strike_monotonicity: return "strike_monotonicity";
    case ViolationKind::convexity: return "convexity";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  int maturity_index;  // row in the price grid
  int strike_index;    // column in the price grid; -1 / n for boundary pins
  double magnitude;    // size of the breach, always positive
};

/// Lists every static-arbitrage breach. `tolerance` is an absolute slack on
/// each inequality (second differences are compared after scaling by the
/// local strike spacing).
inline std::vector<Violation> check_static_arbitrage(const PriceGrid& prices, double tolerance = 0.0) {
  if (!prices.spec) throw DataError("price grid: missing grid spec");
  const GridSpec& spec = *prices.spec;
  const int m = spec.m(), n = spec.n();
  if (prices.values.rows() != m || prices.values.cols() != n)
    throw DataError("price grid: shape does not match grid spec");
  const detail::StrikeStencil st(spec);
  std::vector<Violation> out;
  std::vector<double> row(n + 2);
  for (int i = 0; i < m; ++i) {
    row.front() = st.payoff.front();
    row.back() = st.payoff.back();
    for (int j = 0; j < n; ++j) {
      const double c = prices.values(i, j);
      row[j + 1] = c;
      const double lb = st.payoff[j + 1];
      if (!(c >= lb - tolerance)) out.push_back({ViolationKind::lower_bound, i, j, lb - c});
      if (!(c <= 1.0 + tolerance)) out.push_back({ViolationKind::upper_bound, i, j, c - 1.0});
      if (i > 0) {
        const double prev = prices.values(i - 1, j);
        if (!(c >= prev - tolerance)) out.push_back({ViolationKind::calendar, i, j, prev - c});
      }
    }
    for (int j = 0; j + 1 < n + 2; ++j)
      if (!(row[j + 1] <= row[j] + tolerance))
        out.push_back({ViolationKind::strike_monotonicity, i, j - 1, row[j + 1] - row[j]});
    for (int j = 0; j < n; ++j) {
      const double d2 = st.lo[j] * row[j] - (st.lo[j] + st.up[j]) * row[j + 1] + st.up[j] * row[j + 2];
      const double scale = 0.5 * (st.k[j + 2] - st.k[j]);
      if (!(d2 * scale >= -tolerance)) out.push_back({ViolationKind::convexity, i, j, -d2});
    }
  }
  return out;
}

namespace detail {

// Newton solve for log-variances v of one layer so that advancing e_prev
// reproduces e_target. Used when the layer takes more than one sub-step.
inline void invert_layer_newton(const StrikeStencil& st, const GridSpec& spec, double dt_years,
                                const std::vector<double>& e_prev, const std::vector<double>& e_target,
                                std::vector<double>& v) {
  const int n = spec.n();
  const double h = dt_years / spec.substeps;
  std::vector<double> scale(n);
  for (int j = 0; j < n; ++j) scale[j] = e_target[j] - e_prev[j];

  auto evaluate = [&](const std::vector<double>& vv, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    std::vector<double> a(n);
    for (int j = 0; j < n; ++j) {
      const double kj = st.k[j + 1];
      a[j] = 0.5 * std::exp(vv[j]) * kj * kj * h;
    }
    ImplicitStep step(st, a.data());
    std::vector<double> e = e_prev;
    Eigen::MatrixXd tan = Eigen::MatrixXd::Zero(n, n);
    for (int s = 0; s < spec.substeps; ++s) {
      for (int j = 0; j < n; ++j) e[j] += a[j] * st.payoff_d2[j];
      step.solve(e.data());
      if (jac) {
        // d2 of the full price at the new sub-step.
        for (int q = 0; q < n; ++q) {
          const double cm = st.payoff[q] + (q > 0 ? e[q - 1] : 0.0);
          const double c0 = st.payoff[q + 1] + e[q];
          const double cp = st.payoff[q + 2] + (q + 1 < n ? e[q + 1] : 0.0);
          const double d2 = st.lo[q] * cm - (st.lo[q] + st.up[q]) * c0 + st.up[q] * cp;
          tan(q, q) += a[q] * d2;
        }
        for (int q = 0; q < n; ++q) step.solve(tan.col(q).data());
      }
    }
    for (int j = 0; j < n; ++j) r[j] = (e[j] - e_target[j]) / scale[j];
    if (jac) {
      *jac = tan;
      for (int j = 0; j < n; ++j) jac->row(j) /= scale[j];
    }
  };

  Eigen::VectorXd r(n), r_try(n);
  Eigen::MatrixXd jac(n, n);
  evaluate(v, r, &jac);
  double norm = r.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < 100 && norm > 1e-14; ++it) {
    const Eigen::VectorXd dv = jac.partialPivLu().solve(-r);
    if (!dv.allFinite()) break;
    double t = 1.0;
    bool accepted = false;
    std::vector<double> trial(n);
    for (int ls = 0; ls < 40; ++ls) {
      for (int j = 0; j < n; ++j) trial[j] = v[j] + t * std::clamp(dv[j], -5.0, 5.0);
      evaluate(trial, r_try, nullptr);
      const double nt = r_try.lpNorm<Eigen::Infinity>();
      if (nt < norm || nt <= 1e-14) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    v = trial;
    evaluate(v, r, &jac);
    const double prev = norm;
    norm = r.lpNorm<Eigen::Infinity>();
    if (dv.lpNorm<Eigen::Infinity>() * t < 1e-15 && norm >= prev) break;
  }
  if (!(norm <= 1e-9)) {
    std::ostringstream os;
    os << "dlv inversion: Newton did not reproduce the price layer (relative residual " << norm << ")";
    throw ConvergenceError(os.str());
  }
}

}  // namespace detail

/// Inverse of price_from_dlv. Requires strictly positive butterflies and
/// strictly increasing calendar spreads at every node.
inline DlvGrid dlv_from_price(const PriceGrid& prices) {
  if (!prices.spec) throw DataError("price grid: missing grid spec");
  const GridSpec& spec = *prices.spec;
  const int m = spec.m(), n = spec.n();
  if (prices.values.rows() != m || prices.values.cols() != n)
    throw DataError("price grid: shape does not match grid spec");
  const detail::StrikeStencil st(spec);

  Eigen::MatrixXd sig(m, n);
  std::vector<double> e_prev(n, 0.0), e(n), v(n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const double c = prices.values(i, j);
      if (!std::isfinite(c)) throw DataError("price grid: non-finite entry");
      e[j] = c - st.payoff[j + 1];
    }
    const double dt = detail::year_fraction(spec, i);
    for (int j = 0; j < n; ++j) {
      const double cal = e[j] - e_prev[j];
      if (!(cal > 0.0)) {
        std::ostringstream os;
        os << "static arbitrage: calendar spread not strictly positive between maturity index " << i - 1
           << " and " << i << " at strike index " << j << " (k " << spec.strikes[j] << "), dC = " << cal;
        throw ArbitrageError(os.str());
      }
    }
    for (int j = 0; j < n; ++j) {
      const double cal = e[j] - e_prev[j];
      const double em = j > 0 ? e[j - 1] : 0.0;
      const double ep = j + 1 < n ? e[j + 1] : 0.0;
      const double d2 = st.lo[j] * em - (st.lo[j] + st.up[j]) * e[j] + st.up[j] * ep + st.payoff_d2[j];
      if (!(d2 > 0.0)) {
        std::ostringstream os;
        os << "static arbitrage: degenerate or negative butterfly at maturity index " << i << " (tau "
           << spec.maturities[i] << "), strike index " << j << " (k " << spec.strikes[j] << "), d2C = " << d2;
        throw ArbitrageError(os.str());
      }
      const double kj = st.k[j + 1];
      // Closed form of a single implicit step over the whole interval.
      v[j] = std::log(cal / (0.5 * dt * kj * kj * d2));
    }
    if (spec.substeps > 1) detail::invert_layer_newton(st, spec, dt, e_prev, e, v);
    for (int j = 0; j < n; ++j) sig(i, j) = std::exp(0.5 * v[j]);
    e_prev = e;
  }
  return DlvGrid(prices.spec, std::move(sig));
}

/// Bilinear interpolation on the price grid augmented by the tau = 0 intrinsic
/// layer and by boundary strikes pinned to intrinsic value.
inline double interp_call(const PriceGrid& prices, double tau, double k) {
  const GridSpec& spec = *prices.spec;
  const int m = spec.m(), n = spec.n();
  const double tau_max = spec.maturities.back();
  if (!(tau >= 0.0 && tau <= tau_max) || !(k >= spec.low_boundary_strike && k <= spec.high_boundary_strike)) {
    std::ostringstream os;
    os << "interp_call: (tau " << tau << ", k " << k << ") outside the interpolation lattice";
    throw std::out_of_range(os.str());
  }
  // Row r of the augmented lattice: r = 0 is intrinsic, r >= 1 is maturity r - 1.
  auto node = [&](int r, int c) {
    // c indexes augmented strikes 0..n+1
    if (r == 0 || c == 0 || c == n + 1) {
      const double kk = c == 0 ? spec.low_boundary_strike
                               : (c == n + 1 ? spec.high_boundary_strike : spec.strikes[c - 1]);
      return intrinsic(kk);
    }
    return prices.values(r - 1, c - 1);
  };
  int r0, r1;
  double t0, t1;
  if (tau <= spec.maturities[0]) {
    r0 = 0;
    r1 = 1;
    t0 = 0.0;
    t1 = spec.maturities[0];
  } else {
    int i = static_cast<int>(std::upper_bound(spec.maturities.begin(), spec.maturities.end(), tau) -
                             spec.maturities.begin());
    i = std::min(i, m - 1);
    r0 = i;
    r1 = i + 1;
    t0 = spec.maturities[i - 1];
    t1 = spec.maturities[i];
  }
  int c0, c1;
  double k0, k1;
  if (k <= spec.strikes.front()) {
    c0 = 0;
    c1 = 1;
    k0 = spec.low_boundary_strike;
    k1 = spec.strikes.front();
  } else if (k >= spec.strikes.back()) {
    c0 = n;
    c1 = n + 1;
    k0 = spec.strikes.back();
    k1 = spec.high_boundary_strike;
  } else {
    int j = static_cast<int>(std::upper_bound(spec.strikes.begin(), spec.strikes.end(), k) - spec.strikes.begin());
    c0 = j;
    c1 = j + 1;
    k0 = spec.strikes[j - 1];
    k1 = spec.strikes[j];
  }
  const double a = (tau - t0) / (t1 - t0);
  const double b = (k - k0) / (k1 - k0);
  const double lower = (1.0 - b) * node(r0, c0) + b * node(r0, c1);
  const double upper = (1.0 - b) * node(r1, c0) + b * node(r1, c1);
  return (1.0 - a) * lower + a * upper;
}

struct RollResult {
  double value;   // next-day value in units of the previous spot
  double change;  // value minus the previous-day interpolated price
};

/// Next-day value of a call bought at (tau, k) on the previous day's floating
/// grid, together with its one-day price change.
inline RollResult roll_option_value(const MarketState& next, double spot_prev, double tau, double k,
                                    const PriceGrid& prev_prices) {
  if (!(tau - 1.0 >= 0.0)) throw std::out_of_range("roll_option_value: tau - 1 is negative");
  if (!(spot_prev > 0.0) || !(next.spot > 0.0)) throw DataError("roll_option_value: spot must be positive");
  const GridSpec& spec = *next.prices.spec;
  const double ratio = next.spot / spot_prev;
  const double shifted = k / ratio;
  double value;
  if (shifted < spec.low_boundary_strike || shifted > spec.high_boundary_strike)
    value = ratio * intrinsic(shifted);
  else
    value = ratio * interp_call(next.prices, tau - 1.0, shifted);
  return {value, value - interp_call(prev_prices, tau, k)};
}

}  // namespace rnsim

#endif  // RNSIM_GRID_MODEL_HPP
