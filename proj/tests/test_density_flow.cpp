#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rnsim/density_flow.hpp"

using namespace rnsim;

namespace {

ConditionalFlow random_flow(int c, int d, int bins, std::uint64_t seed, double scale = 1.0) {
  FlowArchitecture arch;
  arch.condition_dim = c;
  arch.dim = d;
  arch.bins = bins;
  arch.hidden = {16, 16};
  ConditionalFlow flow(arch, seed);
  // Give the zero-initialised output layers some structure.
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> n01(0.0, scale);
  for (auto& net : flow.conditioners())
    for (Eigen::Index i = 0; i < net.parameter_count(); ++i) net.params()[i] += n01(rng);
  return flow;
}

// Sets an unconditional one-dimensional flow to fixed bin masses.
void set_fixed_probs(ConditionalFlow& flow, const Eigen::VectorXd& probs) {
  auto& net = flow.conditioners()[0];
  net.params().setZero();
  net.bias(net.num_layers() - 1) = probs.array().log().matrix();
}

}  // namespace

TEST(BinDensity, KnownValues) {
  BinDensity b{Eigen::VectorXd::Constant(4, 0.25)};
  EXPECT_DOUBLE_EQ(b.inverse_cdf(0.25), 0.25);
  EXPECT_DOUBLE_EQ(b.cdf(0.6), 0.6);
  EXPECT_EQ(BinDensity::bin_of(0.25, 4), 1);
  EXPECT_EQ(BinDensity::bin_of(1.0, 4), 3);
  EXPECT_EQ(BinDensity::bin_of(0.0, 4), 0);
  BinDensity s{(Eigen::VectorXd(2) << 0.75, 0.25).finished()};
  EXPECT_DOUBLE_EQ(s.density(0.2), 1.5);
  EXPECT_DOUBLE_EQ(s.inverse_cdf(0.75), 0.5);
  EXPECT_DOUBLE_EQ(s.inverse_cdf(0.375), 0.25);
  EXPECT_DOUBLE_EQ(s.inverse_cdf(1.0), 1.0);
}

TEST(ConditionalFlow, FreshFlowIsUniform) {
  FlowArchitecture arch;
  ConditionalFlow flow(arch, 3);
  const Eigen::VectorXd cond = Eigen::VectorXd::Constant(3, 0.3);
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(4, 0.4);
  EXPECT_NEAR(log_density(flow, x, cond), 0.0, 1e-14);
  EXPECT_EQ(flow.conditioners()[0].input_dim(), 3);
  EXPECT_EQ(flow.conditioners()[3].input_dim(), 6);
  EXPECT_EQ(flow.conditioners()[0].output_dim(), 64);
}

TEST(ConditionalFlow, LogDensityOfSkewedTwoBinConditional) {
  FlowArchitecture arch;
  arch.condition_dim = 0;
  arch.dim = 1;
  arch.bins = 2;
  ConditionalFlow flow(arch, 0);
  set_fixed_probs(flow, (Eigen::VectorXd(2) << 0.75, 0.25).finished());
  const Eigen::VectorXd none(0);
  EXPECT_NEAR(log_density(flow, Eigen::VectorXd::Constant(1, 0.3), none), std::log(1.5), 1e-12);
  EXPECT_NEAR(log_density(flow, Eigen::VectorXd::Constant(1, 0.7), none), std::log(0.5), 1e-12);
  EXPECT_NEAR(std::log(1.5), 0.405465, 1e-6);
}

TEST(ConditionalFlow, DensityIntegratesToOne) {
  const ConditionalFlow flow = random_flow(2, 2, 8, 11);
  const Eigen::VectorXd cond = (Eigen::VectorXd(2) << 0.2, -0.7).finished();
  // Midpoints of a grid aligned with the bins integrate a piecewise constant
  // density exactly in u0; in u1 each conditional sums to one.
  const int cells = 64;
  double total = 0.0;
  for (int a = 0; a < cells; ++a)
    for (int b = 0; b < cells; ++b) {
      const Eigen::Vector2d x((a + 0.5) / cells, (b + 0.5) / cells);
      total += std::exp(log_density(flow, x, cond)) / (cells * cells);
    }
  EXPECT_NEAR(total, 1.0, 1e-10);
}

TEST(ConditionalFlow, RescaledDensityIsInUnitCube) {
  ConditionalFlow flow = random_flow(1, 2, 8, 12);
  flow.set_bounds(Eigen::Vector2d(-2.0, 10.0), Eigen::Vector2d(2.0, 11.0));
  const Eigen::VectorXd cond = Eigen::VectorXd::Constant(1, 0.1);
  EXPECT_THROW(log_density(flow, Eigen::Vector2d(2.5, 10.5), cond), RangeError);
  try {
    rescale_to_unit(flow, Eigen::Vector2d(0.0, 12.0));
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
  EXPECT_NO_THROW(log_density(flow, Eigen::Vector2d(2.0, 10.0), cond));
}

TEST(ConditionalFlow, SamplesMatchModelCdf) {
  FlowArchitecture arch;
  arch.condition_dim = 0;
  arch.dim = 1;
  arch.bins = 8;
  ConditionalFlow flow(arch, 0);
  Eigen::VectorXd probs(8);
  probs << 0.05, 0.1, 0.2, 0.3, 0.15, 0.1, 0.06, 0.04;
  set_fixed_probs(flow, probs);
  const BinDensity model{probs};
  const int n = 100000;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd u(1, n);
  for (int i = 0; i < n; ++i) u(0, i) = unif(rng);
  const Eigen::MatrixXd x = sample_batch(flow, Eigen::MatrixXd(0, n), u);
  std::vector<double> s(x.data(), x.data() + n);
  std::sort(s.begin(), s.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = model.cdf(s[i]);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LE(ks, 0.01);
}

TEST(ConditionalFlow, SampleStepMatchesBatchAndIsTriangular) {
  ConditionalFlow flow = random_flow(3, 4, 16, 21);
  flow.set_bounds(Eigen::Vector4d(-1, -2, -3, -4), Eigen::Vector4d(1, 2, 3, 4));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector3d cond(unif(rng) * 2 - 1, unif(rng) * 2 - 1, unif(rng) * 2 - 1);
    Eigen::Vector4d u(unif(rng), unif(rng), unif(rng), unif(rng));
    const Eigen::VectorXd x = sample_step(flow, cond, u);
    const Eigen::MatrixXd xb = sample_batch(flow, Eigen::MatrixXd(cond), Eigen::MatrixXd(u));
    EXPECT_LE((xb.col(0) - x).cwiseAbs().maxCoeff(), 1e-12);
    for (int j = 0; j < 4; ++j) {
      Eigen::Vector4d v = u;
      v[j] = unif(rng);
      const Eigen::VectorXd y = sample_step(flow, cond, v);
      for (int k = 0; k < j; ++k) EXPECT_EQ(y[k], x[k]);
    }
  }
}

TEST(ConditionalFlow, SamplingInvertsTheCdf) {
  ConditionalFlow flow = random_flow(2, 3, 32, 31);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector2d cond(unif(rng), -unif(rng));
    const Eigen::Vector3d u(unif(rng), unif(rng), unif(rng));
    const Eigen::VectorXd x = sample_step(flow, cond, u);
    for (int j = 0; j < 3; ++j) {
      const BinDensity p = bin_probs(flow, j, cond, x.head(j));
      worst = std::max(worst, std::abs(p.cdf(x[j]) - u[j]));
    }
  }
  EXPECT_LE(worst, 1e-10);
  const Eigen::VectorXd lo = sample_step(flow, Eigen::Vector2d(0, 0), Eigen::Vector3d::Zero());
  const Eigen::VectorXd hi = sample_step(flow, Eigen::Vector2d(0, 0), Eigen::Vector3d::Ones());
  EXPECT_EQ(lo, flow.lo());
  EXPECT_EQ(hi, flow.hi());
}

TEST(ConditionalFlow, BatchLogDensityMatchesSingleRecord) {
  const ConditionalFlow flow = random_flow(2, 3, 16, 41);
  Eigen::MatrixXd cond = Eigen::MatrixXd::Random(2, 20);
  Eigen::MatrixXd x = (Eigen::MatrixXd::Random(3, 20).array() + 1.0) * 0.5;
  const Eigen::VectorXd lb = log_density_batch(flow, x, cond);
  for (int c = 0; c < 20; ++c) EXPECT_NEAR(lb[c], log_density(flow, x.col(c), cond.col(c)), 1e-12);
}

TEST(WeightedNll, LinearInWeightsAndMatchesDensity) {
  const ConditionalFlow flow = random_flow(2, 2, 8, 51);
  FlowDataset data{Eigen::MatrixXd::Random(2, 30), (Eigen::MatrixXd::Random(2, 30).array() + 1.0) * 0.5,
                   (Eigen::VectorXd::Random(30).array() + 1.5).matrix()};
  const double base = weighted_nll(flow, data);
  double oracle = 0.0;
  for (int c = 0; c < 30; ++c) oracle -= data.weights[c] * log_density(flow, data.targets.col(c), data.conditions.col(c));
  EXPECT_NEAR(base, oracle / 30, 1e-12);
  FlowDataset doubled = data;
  doubled.weights *= 2.0;
  EXPECT_NEAR(weighted_nll(flow, doubled), 2.0 * base, 1e-12);
  FlowDataset zero = data;
  zero.weights.setZero();
  EXPECT_EQ(weighted_nll(flow, zero), 0.0);
  FlowDataset bad = data;
  bad.weights[3] = -1.0;
  EXPECT_THROW(weighted_nll(flow, bad), DataError);
}

TEST(WeightedNll, GradientMatchesFiniteDifferences) {
  ConditionalFlow flow = random_flow(1, 2, 4, 61, 0.5);
  FlowDataset data{Eigen::MatrixXd::Random(1, 12), (Eigen::MatrixXd::Random(2, 12).array() + 1.0) * 0.5,
                   (Eigen::VectorXd::Random(12).array() + 1.5).matrix()};
  std::vector<Eigen::VectorXd> grads;
  weighted_nll(flow, data, &grads);
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j)
    for (Eigen::Index p = 0; p < flow.conditioners()[j].parameter_count(); p += 7) {
      ConditionalFlow a = flow, b = flow;
      a.conditioners()[j].params()[p] += h;
      b.conditioners()[j].params()[p] -= h;
      const double fd = (weighted_nll(a, data) - weighted_nll(b, data)) / (2 * h);
      EXPECT_NEAR(grads[j][p], fd, 1e-7);
    }
}

TEST(FitFlow, RecoversConditionalBinMasses) {
  // Condition c in {-1, +1}; target in four equal bins with masses that
  // depend on the condition.
  const Eigen::Vector4d p_minus(0.1, 0.2, 0.3, 0.4), p_plus(0.4, 0.3, 0.2, 0.1);
  const int n = 10000;
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  FlowDataset data{Eigen::MatrixXd(1, n), Eigen::MatrixXd(1, n), Eigen::VectorXd::Ones(n)};
  for (int i = 0; i < n; ++i) {
    const bool plus = unif(rng) < 0.5;
    const Eigen::Vector4d& p = plus ? p_plus : p_minus;
    data.conditions(0, i) = plus ? 1.0 : -1.0;
    data.targets(0, i) = BinDensity::inverse_cdf(p.data(), 4, unif(rng));
  }
  FlowArchitecture arch;
  arch.condition_dim = 1;
  arch.dim = 1;
  arch.bins = 4;
  arch.hidden = {8};
  ConditionalFlow flow(arch, 1);
  FitConfig cfg;
  cfg.adam.learning_rate = 1e-2;
  cfg.batch_size = 500;
  cfg.lr_decay = 0.97;
  cfg.max_epochs = 300;
  cfg.min_epochs = 60;
  cfg.patience = 30;
  const FitReport r = fit_flow(flow, data, cfg);
  const Eigen::VectorXd none(0);
  const BinDensity qm = bin_probs(flow, 0, Eigen::VectorXd::Constant(1, -1.0), none);
  const BinDensity qp = bin_probs(flow, 0, Eigen::VectorXd::Constant(1, 1.0), none);
  EXPECT_LE((qm.probs - p_minus).cwiseAbs().maxCoeff(), 0.02);
  EXPECT_LE((qp.probs - p_plus).cwiseAbs().maxCoeff(), 0.02);
  {
    Eigen::Vector4d em = Eigen::Vector4d::Zero(), ep = em;
    for (int i = 0; i < 8000; ++i) (data.conditions(0, i) > 0 ? ep : em)[BinDensity::bin_of(data.targets(0, i), 4)] += 1;
    em /= em.sum(); ep /= ep.sum();
    // The fit should also sit close to the training-split frequencies.
    EXPECT_LE((qm.probs - em).cwiseAbs().maxCoeff(), 0.015);
    EXPECT_LE((qp.probs - ep).cwiseAbs().maxCoeff(), 0.015);
  }
  EXPECT_GT(r.epochs_run, 0);
}

TEST(FitFlow, WeightsActLikeResampling) {
  // Uniform targets with weights 3 on the lower half and 1 on the upper half
  // should produce masses 0.75 / 0.25.
  const int n = 8000;
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  FlowDataset data{Eigen::MatrixXd(0, n), Eigen::MatrixXd(1, n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    data.targets(0, i) = unif(rng);
    data.weights[i] = data.targets(0, i) < 0.5 ? 1.5 : 0.5;
  }
  FlowArchitecture arch;
  arch.condition_dim = 0;
  arch.dim = 1;
  arch.bins = 2;
  arch.hidden = {4};
  ConditionalFlow flow(arch, 2);
  FitConfig cfg;
  cfg.adam.learning_rate = 2e-2;
  cfg.max_epochs = 40;
  cfg.min_epochs = 5;
  cfg.patience = 10;
  fit_flow(flow, data, cfg);
  const BinDensity q = bin_probs(flow, 0, Eigen::VectorXd(0), Eigen::VectorXd(0));
  EXPECT_NEAR(q.probs[0], 0.75, 0.02);
}

TEST(FitFlow, EarlyStoppingContract) {
  ConditionalFlow flow = random_flow(1, 2, 8, 91, 0.1);
  const int n = 2000;
  FlowDataset data{Eigen::MatrixXd::Random(1, n), (Eigen::MatrixXd::Random(2, n).array() * 0.4 + 0.5),
                   Eigen::VectorXd::Ones(n)};
  FitConfig cfg;
  cfg.max_epochs = 40;
  cfg.min_epochs = 5;
  cfg.patience = 3;
  cfg.adam.learning_rate = 5e-2;
  const FitReport r = fit_flow(flow, data, cfg);
  ASSERT_EQ(static_cast<int>(r.validation_loss.size()), r.epochs_run);
  EXPECT_GE(r.epochs_run, cfg.min_epochs);
  EXPECT_LE(r.epochs_run, cfg.max_epochs);
  for (std::size_t e = 1; e < r.best_so_far.size(); ++e) EXPECT_LE(r.best_so_far[e], r.best_so_far[e - 1]);
  if (r.epochs_run < cfg.max_epochs) EXPECT_EQ(r.epochs_run - 1 - r.best_epoch, cfg.patience);
  const Eigen::Index split = training_split(n, cfg.validation_fraction);
  EXPECT_NEAR(weighted_nll(flow, data.slice(split, n - split)), r.best_validation_loss, 1e-12);
}

TEST(FitFlow, DeterministicForFixedSeed) {
  const int n = 1000;
  FlowDataset data{Eigen::MatrixXd::Random(1, n), (Eigen::MatrixXd::Random(1, n).array() * 0.4 + 0.5),
                   Eigen::VectorXd::Ones(n)};
  FitConfig cfg;
  cfg.max_epochs = 5;
  cfg.min_epochs = 5;
  cfg.seed = 3;
  ConditionalFlow a = random_flow(1, 1, 8, 5), b = random_flow(1, 1, 8, 5);
  fit_flow(a, data, cfg);
  fit_flow(b, data, cfg);
  EXPECT_EQ(a.conditioners()[0].params(), b.conditioners()[0].params());
}

TEST(FlowCheckpoint, RoundTrip) {
  ConditionalFlow flow = random_flow(3, 2, 8, 101);
  flow.set_bounds(Eigen::Vector2d(-1, 0), Eigen::Vector2d(1, 3));
  flow.set_condition_bounds(Eigen::Vector3d(-2, -2, -2), Eigen::Vector3d(2, 2, 3));
  const ConditionalFlow back = flow_from_json(nlohmann::json::parse(to_json(flow).dump()));
  const Eigen::Vector3d cond(0.1, 0.2, -0.3);
  const Eigen::Vector2d x(0.3, 1.0);
  EXPECT_EQ(log_density(back, x, cond), log_density(flow, x, cond));
  EXPECT_EQ(back.condition_hi(), flow.condition_hi());
}
