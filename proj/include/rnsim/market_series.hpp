#ifndef RNSIM_MARKET_SERIES_HPP
#define RNSIM_MARKET_SERIES_HPP

// Daily history of spot levels and DLV grids with their prices.

#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rnsim/errors.hpp"
#include "rnsim/grid_model.hpp"

namespace rnsim {

struct MarketSeries {
  GridSpecPtr spec;
  std::vector<std::string> dates;  // ISO yyyy-mm-dd
  std::vector<double> spots;
  std::vector<DlvGrid> dlvs;
  std::vector<PriceGrid> prices;

  Eigen::Index size() const { return static_cast<Eigen::Index>(spots.size()); }

  MarketState state(Eigen::Index t) const { return {spots[t], prices[t]}; }

  /// One-day simple returns; entry t is S_{t+1} / S_t - 1.
  Eigen::VectorXd returns() const {
    Eigen::VectorXd r(std::max<Eigen::Index>(size() - 1, 0));
    for (Eigen::Index t = 0; t + 1 < size(); ++t) r[t] = spots[t + 1] / spots[t] - 1.0;
    return r;
  }

  /// Flattened DLV grids, one column per day (maturity-major rows).
  Eigen::MatrixXd dlv_columns() const {
    Eigen::MatrixXd out(spec->size(), size());
    for (Eigen::Index t = 0; t < size(); ++t)
      for (int i = 0; i < spec->m(); ++i)
        for (int j = 0; j < spec->n(); ++j) out(i * spec->n() + j, t) = dlvs[t].values(i, j);
    return out;
  }

  void validate() const {
    if (!spec) throw DataError("market series: missing grid spec");
    const std::size_t n = spots.size();
    if (dates.size() != n || dlvs.size() != n || prices.size() != n)
      throw DataError("market series: column lengths differ");
    if (n < 2) throw DataError("market series: need at least two days");
    for (std::size_t t = 0; t < n; ++t) {
      if (!(spots[t] > 0.0) || !std::isfinite(spots[t]))
        throw DataError("market series: non-positive spot at row " + std::to_string(t));
      if (t > 0 && !(dates[t] > dates[t - 1]))
        throw DataError("market series: dates not strictly increasing at row " + std::to_string(t));
    }
  }
};

/// Weekday calendar starting at `first` (yyyy-mm-dd).
inline std::vector<std::string> business_days(int count, int year = 2010, int month = 1, int day = 4) {
  auto days_in_month = [](int y, int m) {
    static const int d[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return m == 2 && leap ? 29 : d[m - 1];
  };
  // Zeller-style weekday, 0 = Monday.
  auto weekday = [](int y, int m, int d) {
    if (m < 3) {
      m += 12;
      y -= 1;
    }
    const int k = y % 100, j = y / 100;
    const int h = (d + 13 * (m + 1) / 5 + k + k / 4 + j / 4 + 5 * j) % 7;  // 0 = Saturday
    return (h + 5) % 7;
  };
  std::vector<std::string> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    if (weekday(year, month, day) < 5) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
      out.emplace_back(buf);
    }
    if (++day > days_in_month(year, month)) {
      day = 1;
      if (++month > 12) {
        month = 1;
        ++year;
      }
    }
  }
  return out;
}

}  // namespace rnsim

#endif  // RNSIM_MARKET_SERIES_HPP
