#ifndef RNSIM_DRIFT_REMOVAL_HPP
#define RNSIM_DRIFT_REMOVAL_HPP

// Entropy-based change of measure on a Monte Carlo sample of one-step
// instrument changes dX (N x D). The optimal exponential-utility action a*
// minimises L(a) = mean_j exp(-lambda a . dx_j); the weights
// w_j = exp(-lambda a* . dx_j) / mean_i exp(-lambda a* . dx_i) turn the sample
// into an exact martingale sample: mean_j w_j dx_j = 0.

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "rnsim/errors.hpp"

namespace rnsim {

/// u(x) = (1 - exp(-lambda x)) / lambda.
inline double exp_utility(double x, double lambda) { return -std::expm1(-lambda * x) / lambda; }

/// Inverse of exp_utility.
inline double inverse_exp_utility(double u, double lambda) { return -std::log1p(-lambda * u) / lambda; }

struct UtilityLoss {
  double loss;            // L(a); may underflow or overflow, see log_loss
  double log_loss;        // log L(a), always finite for finite inputs
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

namespace detail {

// Softmax of z_j = -lambda a . dx_j and log-mean-exp of z.
inline double tilt(const Eigen::VectorXd& a, const Eigen::MatrixXd& dx, double lambda, Eigen::VectorXd& pi) {
  const Eigen::VectorXd z = -lambda * (dx * a);
  const double mx = z.maxCoeff();
  pi = (z.array() - mx).exp().matrix();
  const double s = pi.sum();
  pi /= s;
  return mx + std::log(s / static_cast<double>(dx.rows()));
}

inline void check_sample(const Eigen::MatrixXd& dx, double lambda) {
  if (dx.rows() < 2) throw DataError("gains sample: need at least two scenarios");
  if (dx.cols() < 1) throw DataError("gains sample: need at least one instrument");
  if (!dx.allFinite()) throw DataError("gains sample: non-finite entries");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("risk aversion must be positive");
}

}  // namespace detail

/// Monte Carlo utility loss with gradient and Hessian.
inline UtilityLoss utility_loss(const Eigen::VectorXd& a, const Eigen::MatrixXd& dx, double lambda) {
  detail::check_sample(dx, lambda);
  if (a.size() != dx.cols()) throw std::invalid_argument("utility_loss: action size mismatch");
  Eigen::VectorXd pi;
  const double log_l = detail::tilt(a, dx, lambda, pi);
  const double l = std::exp(log_l);
  const Eigen::MatrixXd weighted = dx.array().colwise() * pi.array();
  Eigen::VectorXd grad = -lambda * l * (dx.transpose() * pi);
  Eigen::MatrixXd hess = (lambda * lambda * l) * (weighted.transpose() * dx);
  return {l, log_l, std::move(grad), std::move(hess)};
}

struct NewtonOptions {
  double tolerance = 1e-12;  // on lambda * |mean_j w_j dx_j|_inf
  int max_iterations = 100;
};

struct MeasureChange {
  Eigen::VectorXd action;
  double risk_aversion = 1.0;
  Eigen::VectorXd gains;    // G*_j = a* . dx_j
  Eigen::VectorXd weights;  // filled by compute_weights
  double gradient_norm = 0.0;
  double log_loss = 0.0;    // log L(a*)
  int iterations = 0;
};

/// Damped Newton on log L(a) with eigen-regularised steps and backtracking.
///
/// log L is convex with gradient -lambda E_pi[dx] and Hessian
/// lambda^2 Cov_pi(dx), where pi is the tilted empirical measure; its gradient
/// is exactly -lambda times the reweighted drift, so the stopping rule bounds
/// the martingale error of the weights directly. Directions with zero sample
/// variance are left at zero.
inline MeasureChange solve_optimal_action(const Eigen::MatrixXd& dx, double lambda, const NewtonOptions& opts = {}) {
  detail::check_sample(dx, lambda);
  const Eigen::Index dim = dx.cols();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd pi;
  double f = detail::tilt(a, dx, lambda, pi);
  double gnorm = 0.0;
  int it = 0;
  for (;; ++it) {
    const Eigen::VectorXd mean = dx.transpose() * pi;
    const Eigen::VectorXd g = -lambda * mean;
    gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm <= opts.tolerance) break;
    if (it >= opts.max_iterations) {
      std::ostringstream os;
      os << "newton: no convergence after " << it << " iterations (gradient " << gnorm << ", log L " << f << ")";
      throw ConvergenceError(os.str());
    }
    const Eigen::MatrixXd centred = dx.rowwise() - mean.transpose();
    const Eigen::MatrixXd h =
        (lambda * lambda) * (centred.array().colwise() * pi.array()).matrix().transpose() * centred;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double top = std::max(ev.maxCoeff(), 0.0);
    const double cutoff = top * 1e-13;
    Eigen::VectorXd step = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (ev[i] <= cutoff || !(top > 0.0)) continue;
      const Eigen::VectorXd v = eig.eigenvectors().col(i);
      step -= (v.dot(g) / (ev[i] + 1e-14 * top)) * v;
    }
    const double slope = g.dot(step);
    if (!(slope < 0.0)) {
      std::ostringstream os;
      os << "newton: no descent direction (gradient " << gnorm << "); sample may admit arbitrage";
      throw ConvergenceError(os.str());
    }
    double t = 1.0;
    Eigen::VectorXd trial, pi_trial;
    double f_trial = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      trial = a + t * step;
      f_trial = detail::tilt(trial, dx, lambda, pi_trial);
      if (f_trial <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      // Near the optimum log L moves by less than its rounding noise and
      // Armijo decides on noise; accept a step that halves the gradient.
      const double g_trial = lambda * (dx.transpose() * pi_trial).lpNorm<Eigen::Infinity>();
      if (g_trial <= 0.5 * gnorm && f_trial <= f + 1e-14 * std::max(1.0, std::abs(f))) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      std::ostringstream os;
      os << "newton: line search failed (gradient " << gnorm << ")";
      throw ConvergenceError(os.str());
    }
    a = trial;
    pi = pi_trial;
    f = f_trial;
  }
  MeasureChange mc;
  mc.action = a;
  mc.risk_aversion = lambda;
  mc.gains = dx * a;
  mc.gradient_norm = gnorm;
  mc.log_loss = f;
  mc.iterations = it;
  return mc;
}

/// w_j = exp(-lambda G_j) / mean_i exp(-lambda G_i), max-shifted.
inline Eigen::VectorXd compute_weights(const Eigen::MatrixXd& dx, const Eigen::VectorXd& action, double lambda) {
  detail::check_sample(dx, lambda);
  Eigen::VectorXd pi;
  detail::tilt(action, dx, lambda, pi);
  Eigen::VectorXd w = pi * static_cast<double>(dx.rows());
  // Renormalise once more so that the sample mean is 1 to rounding.
  w /= w.mean();
  return w;
}

inline void compute_weights(const Eigen::MatrixXd& dx, MeasureChange& mc) {
  mc.weights = compute_weights(dx, mc.action, mc.risk_aversion);
}

}  // namespace rnsim

#endif  // RNSIM_DRIFT_REMOVAL_HPP
