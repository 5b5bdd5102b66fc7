#ifndef RNSIM_INSTRUMENTS_HPP
#define RNSIM_INSTRUMENTS_HPP

// Tradeable instruments (the spot and listed calls on grid nodes) and their
// one-day value changes, in units of the previous spot.

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rnsim/errors.hpp"
#include "rnsim/grid_model.hpp"

namespace rnsim {

struct Instrument {
  bool is_spot = false;
  double tau = 0.0;     // business days
  double strike = 0.0;  // relative strike

  static Instrument spot() { return {true, 0.0, 0.0}; }
  static Instrument call(double tau, double strike) { return {false, tau, strike}; }

  std::string name() const {
    if (is_spot) return "spot";
    char buf[48];
    std::snprintf(buf, sizeof buf, "call_%gd_%g", tau, strike);
    return buf;
  }

  friend bool operator==(const Instrument&, const Instrument&) = default;
};

struct InstrumentSet {
  std::vector<Instrument> items;

  /// Spot, ATM 60-day call, ATM 120-day call.
  static InstrumentSet reference() {
    return {{Instrument::spot(), Instrument::call(60.0, 1.0), Instrument::call(120.0, 1.0)}};
  }

  int size() const { return static_cast<int>(items.size()); }

  void validate(const GridSpec& spec) const {
    if (items.empty()) throw ConfigError("instruments: empty set");
    for (std::size_t a = 0; a < items.size(); ++a) {
      const Instrument& x = items[a];
      if (!x.is_spot && (node_index(spec, x).first < 0 || node_index(spec, x).second < 0))
        throw ConfigError("instruments: " + x.name() + " does not lie on the grid");
      for (std::size_t b = 0; b < a; ++b)
        if (items[b] == x) throw ConfigError("instruments: duplicate " + x.name());
    }
  }

  /// (maturity index, strike index) of a call, -1 when off grid.
  static std::pair<int, int> node_index(const GridSpec& spec, const Instrument& x) {
    int i = -1, j = -1;
    for (int r = 0; r < spec.m(); ++r)
      if (std::abs(spec.maturities[r] - x.tau) < 1e-9) i = r;
    for (int c = 0; c < spec.n(); ++c)
      if (std::abs(spec.strikes[c] - x.strike) < 1e-9) j = c;
    return {i, j};
  }
};

/// Current normalised prices: 1 for the spot, grid values for calls.
inline Eigen::VectorXd instrument_prices(const InstrumentSet& set, const PriceGrid& prices) {
  Eigen::VectorXd out(set.size());
  for (int a = 0; a < set.size(); ++a) {
    const Instrument& x = set.items[a];
    if (x.is_spot) {
      out[a] = 1.0;
    } else {
      const auto [i, j] = InstrumentSet::node_index(*prices.spec, x);
      out[a] = prices.values(i, j);
    }
  }
  return out;
}

/// Writes the one-day changes of every instrument into `out` given the spot
/// ratio S_{t+1}/S_t and the next-day price grid.
inline void instrument_changes(const InstrumentSet& set, const Eigen::VectorXd& current, double ratio,
                               const PriceGrid& next, double* out) {
  const GridSpec& spec = *next.spec;
  for (int a = 0; a < set.size(); ++a) {
    const Instrument& x = set.items[a];
    if (x.is_spot) {
      out[a] = ratio - 1.0;
      continue;
    }
    const double shifted = x.strike / ratio;
    double value;
    if (shifted < spec.low_boundary_strike || shifted > spec.high_boundary_strike)
      value = ratio * intrinsic(shifted);
    else
      value = ratio * interp_call(next, x.tau - 1.0, shifted);
    out[a] = value - current[a];
  }
}

}  // namespace rnsim

#endif  // RNSIM_INSTRUMENTS_HPP
