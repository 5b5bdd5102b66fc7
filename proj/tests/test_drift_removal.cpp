#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "rnsim/drift_removal.hpp"

using namespace rnsim;

namespace {

Eigen::MatrixXd correlated_gains(int n, std::uint64_t seed, double drift = 0.01) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd dx(n, 3);
  for (int j = 0; j < n; ++j) {
    const double z = n01(rng), e1 = n01(rng), e2 = n01(rng);
    dx(j, 0) = drift + 0.02 * z;
    dx(j, 1) = 0.5 * drift + 0.01 * z + 0.004 * e1 + 0.002 * z * z;
    dx(j, 2) = 0.3 * drift + 0.008 * z + 0.003 * e2 + 0.001 * e1 * e1;
  }
  return dx;
}

// Direct loop evaluation of the Monte Carlo loss.
double naive_loss(const Eigen::VectorXd& a, const Eigen::MatrixXd& dx, double lambda) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < dx.rows(); ++j) s += std::exp(-lambda * dx.row(j).dot(a));
  return s / static_cast<double>(dx.rows());
}

}  // namespace

TEST(ExpUtility, BasicProperties) {
  for (double lambda : {0.5, 1.0, 2.0}) {
    EXPECT_EQ(exp_utility(0.0, lambda), 0.0);
    double prev = -1e300;
    for (double x = -5.0; x <= 5.0; x += 0.01) {
      const double u = exp_utility(x, lambda);
      EXPECT_LE(u, x + 1e-15);
      EXPECT_GT(u, prev);
      EXPECT_NEAR(inverse_exp_utility(u, lambda), x, 1e-10);
      // Concavity on a small stencil.
      EXPECT_LT(exp_utility(x - 0.01, lambda) + exp_utility(x + 0.01, lambda), 2.0 * u);
      prev = u;
    }
  }
  for (double x = -1.0; x <= 1.0; x += 0.05) EXPECT_NEAR(exp_utility(x, 1e-6), x, 1e-5);
}

TEST(UtilityLoss, AtZero) {
  const Eigen::MatrixXd dx = correlated_gains(500, 1);
  const double lambda = 3.0;
  const UtilityLoss l = utility_loss(Eigen::VectorXd::Zero(3), dx, lambda);
  EXPECT_DOUBLE_EQ(l.loss, 1.0);
  EXPECT_NEAR(l.log_loss, 0.0, 1e-15);
  const Eigen::VectorXd mean = dx.colwise().mean();
  EXPECT_LE((l.gradient + lambda * mean).cwiseAbs().maxCoeff(), 1e-15);
  const Eigen::MatrixXd second = dx.transpose() * dx / 500.0;
  EXPECT_LE((l.hessian - lambda * lambda * second).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(UtilityLoss, MatchesFiniteDifferences) {
  const Eigen::MatrixXd dx = correlated_gains(300, 2);
  const double lambda = 2.0;
  const Eigen::Vector3d a(5.0, -3.0, 2.0);
  const UtilityLoss l = utility_loss(a, dx, lambda);
  EXPECT_NEAR(l.loss, naive_loss(a, dx, lambda), 1e-14);
  const double h = 1e-4;
  for (int r = 0; r < 3; ++r) {
    Eigen::Vector3d ap = a, am = a;
    ap[r] += h;
    am[r] -= h;
    const double fd = (naive_loss(ap, dx, lambda) - naive_loss(am, dx, lambda)) / (2 * h);
    EXPECT_NEAR(l.gradient[r], fd, 1e-6 * std::abs(fd) + 1e-12);
    const Eigen::VectorXd gfd =
        (utility_loss(ap, dx, lambda).gradient - utility_loss(am, dx, lambda).gradient) / (2 * h);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(l.hessian(c, r), gfd[c], 1e-6 * std::abs(gfd[c]) + 1e-12);
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(l.hessian);
  EXPECT_GE(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(UtilityLoss, IsConvexAlongSegments) {
  const Eigen::MatrixXd dx = correlated_gains(400, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 20.0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Vector3d a(n01(rng), n01(rng), n01(rng)), b(n01(rng), n01(rng), n01(rng));
    const double la = utility_loss(a, dx, 1.0).loss, lb = utility_loss(b, dx, 1.0).loss;
    for (double s : {0.1, 0.25, 0.5, 0.75, 0.9}) {
      const double lm = utility_loss(((1 - s) * a + s * b).eval(), dx, 1.0).loss;
      EXPECT_LE(lm, (1 - s) * la + s * lb + 1e-12);
    }
  }
}

TEST(UtilityLoss, LargeExponentsStayFiniteInLogForm) {
  Eigen::MatrixXd dx(2, 1);
  dx << -1.0, 1.0;
  const UtilityLoss l = utility_loss(Eigen::VectorXd::Constant(1, 2000.0), dx, 1.0);
  EXPECT_TRUE(std::isinf(l.loss));
  EXPECT_NEAR(l.log_loss, 2000.0 - std::log(2.0), 1e-9);
}

TEST(SolveOptimalAction, TwoPointClosedForm) {
  Eigen::MatrixXd dx(2, 1);
  dx << 2.0, -1.0;
  MeasureChange mc = solve_optimal_action(dx, 1.0);
  EXPECT_NEAR(mc.action[0], std::log(2.0) / 3.0, 1e-12);
  EXPECT_NEAR(mc.action[0], 0.231049, 1e-6);
  compute_weights(dx, mc);
  EXPECT_NEAR(mc.weights[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(mc.weights[1], 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(mc.weights.dot(dx.col(0)), 0.0, 1e-12);
}

TEST(SolveOptimalAction, SymmetricAndCentredSamples) {
  Eigen::MatrixXd sym(2, 1);
  sym << 1.0, -1.0;
  EXPECT_EQ(solve_optimal_action(sym, 1.0).action[0], 0.0);
  Eigen::MatrixXd dx = correlated_gains(1000, 5);
  dx.rowwise() -= dx.colwise().mean();
  const NewtonOptions opts;
  const MeasureChange mc = solve_optimal_action(dx, 1.0, opts);
  EXPECT_LE(mc.action.cwiseAbs().maxCoeff(), opts.tolerance * 10);
  const Eigen::VectorXd w = compute_weights(dx, mc.action, 1.0);
  EXPECT_LE((w.array() - 1.0).abs().maxCoeff(), 1e-9);
}

TEST(SolveOptimalAction, WeightsAreAnExactMartingaleDensity) {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    const Eigen::MatrixXd dx = correlated_gains(20000, seed);
    MeasureChange mc = solve_optimal_action(dx, 1.0);
    compute_weights(dx, mc);
    EXPECT_GT(mc.weights.minCoeff(), 0.0);
    EXPECT_NEAR(mc.weights.mean(), 1.0, 1e-12);
    const Eigen::VectorXd drift = dx.transpose() * mc.weights / static_cast<double>(dx.rows());
    EXPECT_LE(drift.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(mc.gradient_norm, 1e-10);
    EXPECT_TRUE(mc.gains.isApprox(dx * mc.action));
    // Weights decrease with realised gains.
    std::vector<int> idx(dx.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return mc.gains[a] < mc.gains[b]; });
    for (std::size_t k = 1; k < idx.size(); ++k) EXPECT_LE(mc.weights[idx[k]], mc.weights[idx[k - 1]]);
  }
}

TEST(SolveOptimalAction, ScaleConsistencyInRiskAversion) {
  const Eigen::MatrixXd dx = correlated_gains(5000, 9);
  MeasureChange one = solve_optimal_action(dx, 1.0);
  MeasureChange four = solve_optimal_action(dx, 4.0);
  compute_weights(dx, one);
  compute_weights(dx, four);
  EXPECT_LE((four.action - one.action / 4.0).cwiseAbs().maxCoeff(), 1e-8 * one.action.norm());
  EXPECT_LE((four.weights - one.weights).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveOptimalAction, RankDeficientSampleSolvesInSpan) {
  Eigen::MatrixXd dx = correlated_gains(2000, 10);
  dx.col(2) = 2.0 * dx.col(0);
  MeasureChange mc = solve_optimal_action(dx, 1.0);
  compute_weights(dx, mc);
  const Eigen::VectorXd drift = dx.transpose() * mc.weights / static_cast<double>(dx.rows());
  EXPECT_LE(drift.cwiseAbs().maxCoeff(), 1e-8);
  // The null direction (2, 0, -1) carries no action.
  EXPECT_NEAR(mc.action.dot(Eigen::Vector3d(2, 0, -1)) / std::sqrt(5.0), 0.0, 1e-8);
  Eigen::MatrixXd zero_col = correlated_gains(100, 11);
  zero_col.col(1).setZero();
  const MeasureChange z = solve_optimal_action(zero_col, 1.0);
  EXPECT_EQ(z.action[1], 0.0);
}

TEST(SolveOptimalAction, ArbitrageSampleFails) {
  // Every scenario gains: no finite optimum exists.
  Eigen::MatrixXd dx(3, 1);
  dx << 0.1, 0.2, 0.3;
  NewtonOptions opts;
  opts.max_iterations = 30;
  EXPECT_THROW(solve_optimal_action(dx, 1.0, opts), ConvergenceError);
}

TEST(SolveOptimalAction, RejectsBadInput) {
  EXPECT_THROW(solve_optimal_action(Eigen::MatrixXd::Zero(1, 2), 1.0), DataError);
  EXPECT_THROW(solve_optimal_action(Eigen::MatrixXd::Ones(4, 2), 0.0), ConfigError);
  Eigen::MatrixXd nan = Eigen::MatrixXd::Ones(4, 2);
  nan(1, 1) = std::nan("");
  EXPECT_THROW(solve_optimal_action(nan, 1.0), DataError);
}

TEST(ComputeWeights, ZeroActionGivesUnitWeights) {
  const Eigen::MatrixXd dx = correlated_gains(100, 12);
  const Eigen::VectorXd w = compute_weights(dx, Eigen::VectorXd::Zero(3), 2.0);
  for (Eigen::Index i = 0; i < w.size(); ++i) EXPECT_DOUBLE_EQ(w[i], 1.0);
}
