#ifndef RNSIM_TEST_SUPPORT_HPP
#define RNSIM_TEST_SUPPORT_HPP

#include <random>

#include <Eigen/Dense>

#include "rnsim/grid_model.hpp"

namespace rnsim::testing {

inline GridSpecPtr reference_spec() { return make_grid_spec(GridSpec{}); }

inline DlvGrid random_dlv(const GridSpecPtr& spec, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd v(spec->m(), spec->n());
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = u(rng);
  return DlvGrid(spec, v);
}

inline DlvGrid flat_dlv(const GridSpecPtr& spec, double sigma) {
  return DlvGrid(spec, Eigen::MatrixXd::Constant(spec->m(), spec->n(), sigma));
}

}  // namespace rnsim::testing

#endif
