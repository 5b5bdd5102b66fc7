#include <cmath>

#include <gtest/gtest.h>

#include "rnsim/diffnet.hpp"

using namespace rnsim;

namespace {

// Plain-loop forward pass, independent of the Eigen code path.
std::vector<double> naive_forward(const Mlp& net, std::vector<double> x) {
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    std::vector<double> y(w.rows());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double s = b[r];
      for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * x[c];
      y[r] = (l + 1 < net.num_layers() && net.hidden_activation() == Activation::tanh) ? std::tanh(s) : s;
    }
    x = std::move(y);
  }
  return x;
}

// Scalar loss sum(G .* f(X)) for gradient checks.
double probe_loss(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  return (net.forward(x).array() * g.array()).sum();
}

}  // namespace

TEST(Mlp, ParameterLayoutAndCount) {
  Mlp net({3, 5, 2}, Activation::tanh);
  EXPECT_EQ(net.parameter_count(), 3 * 5 + 5 + 5 * 2 + 2);
  EXPECT_EQ(net.num_layers(), 2);
  EXPECT_THROW(Mlp({3}, Activation::tanh), ConfigError);
  EXPECT_THROW(Mlp({3, 0, 1}, Activation::tanh), ConfigError);
}

TEST(Mlp, ForwardMatchesNaiveLoops) {
  Rng rng(1);
  for (Activation act : {Activation::tanh, Activation::identity}) {
    Mlp net({4, 7, 6, 3}, act);
    net.initialize(rng);
    net.params() += 0.1 * Eigen::VectorXd::Random(net.parameter_count());
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 9);
    const Eigen::MatrixXd y = net.forward(x);
    for (int c = 0; c < 9; ++c) {
      const auto ref = naive_forward(net, std::vector<double>(x.col(c).data(), x.col(c).data() + 4));
      for (int r = 0; r < 3; ++r) EXPECT_NEAR(y(r, c), ref[r], 1e-13);
    }
  }
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(2);
  Mlp net({3, 8, 8, 2}, Activation::tanh);
  net.initialize(rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
  const Eigen::MatrixXd g = Eigen::MatrixXd::Random(2, 5);
  MlpCache cache;
  net.forward(x, cache);
  Eigen::VectorXd grad;
  Eigen::MatrixXd gin;
  net.backward(cache, g, grad, &gin);
  const double h = 1e-6;
  for (Eigen::Index p = 0; p < net.parameter_count(); ++p) {
    Mlp a = net, b = net;
    a.params()[p] += h;
    b.params()[p] -= h;
    const double fd = (probe_loss(a, x, g) - probe_loss(b, x, g)) / (2 * h);
    EXPECT_NEAR(grad[p], fd, 1e-7 * std::max(1.0, std::abs(fd))) << "param " << p;
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(r, c) += h;
      xm(r, c) -= h;
      const double fd = (probe_loss(net, xp, g) - probe_loss(net, xm, g)) / (2 * h);
      EXPECT_NEAR(gin(r, c), fd, 1e-7);
    }
}

TEST(Mlp, LinearLayerGradientIsOuterProduct) {
  Mlp net({3, 2}, Activation::identity);
  Eigen::MatrixXd x(3, 1);
  x << 1.0, -2.0, 0.5;
  Eigen::MatrixXd g(2, 1);
  g << 3.0, -1.0;
  MlpCache cache;
  net.forward(x, cache);
  Eigen::VectorXd grad;
  net.backward(cache, g, grad);
  const Eigen::MatrixXd outer = g * x.transpose();
  EXPECT_TRUE(Eigen::Map<const Eigen::MatrixXd>(grad.data(), 2, 3).isApprox(outer));
  EXPECT_DOUBLE_EQ(grad[6], 3.0);
  EXPECT_DOUBLE_EQ(grad[7], -1.0);
}

TEST(Mlp, BackwardAccumulates) {
  Rng rng(3);
  Mlp net({2, 4, 1}, Activation::tanh);
  net.initialize(rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 3);
  const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(1, 3);
  MlpCache cache;
  net.forward(x, cache);
  Eigen::VectorXd once, twice;
  net.backward(cache, g, once);
  net.backward(cache, g, twice);
  net.backward(cache, g, twice);
  EXPECT_TRUE(twice.isApprox(2.0 * once));
}

TEST(Mlp, StaleCacheIsRejected) {
  Mlp a({2, 3, 1}, Activation::tanh), b({2, 3, 1}, Activation::tanh);
  MlpCache cache;
  a.forward(Eigen::MatrixXd(Eigen::MatrixXd::Zero(2, 1)), cache);
  Eigen::VectorXd grad;
  EXPECT_THROW(b.backward(cache, Eigen::MatrixXd::Ones(1, 1), grad), std::logic_error);
  EXPECT_THROW(a.backward(cache, Eigen::MatrixXd::Ones(1, 2), grad), std::logic_error);
  EXPECT_THROW(a.forward(Eigen::MatrixXd(Eigen::MatrixXd::Zero(3, 1))), std::invalid_argument);
}

TEST(Mlp, InitializationIsDeterministic) {
  Rng r1(42), r2(42), r3(43);
  Mlp a({4, 16, 2}, Activation::tanh), b = a, c = a;
  a.initialize(r1);
  b.initialize(r2);
  c.initialize(r3);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), c.params());
  Mlp z({4, 16, 2}, Activation::tanh);
  Rng r4(1);
  z.initialize(r4, true);
  EXPECT_EQ(z.forward(Eigen::VectorXd(Eigen::VectorXd::Ones(4))), Eigen::VectorXd(Eigen::VectorXd::Zero(2)));
  for (Eigen::Index i = 0; i < a.weight(0).size(); ++i) EXPECT_LE(std::abs(a.weight(0).data()[i]), 0.5);
}

TEST(Softmax, KnownValuesAndStability) {
  const Eigen::VectorXd p = softmax_normalize(Eigen::VectorXd::Zero(4));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], 0.25);
  Eigen::VectorXd big(3);
  big << 1000.0, 1000.0, -1000.0;
  const Eigen::VectorXd q = softmax_normalize(big);
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_DOUBLE_EQ(q[2], 0.0);
  Eigen::VectorXd l(2);
  l << std::log(3.0), 0.0;
  EXPECT_NEAR(softmax_normalize(l)[0], 0.75, 1e-15);
  Eigen::MatrixXd m(2, 1);
  m << std::log(3.0), 0.0;
  EXPECT_NEAR(log_softmax_columns(m)(1, 0), std::log(0.25), 1e-15);
}

TEST(Adam, FirstStepsHaveLearningRateMagnitude) {
  OptimizerState opt(AdamConfig{}, 3);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd g(3);
  g << 2.0, -0.5, 0.0;
  adam_step(opt, p, g);
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1e-3, 1e-9);
  EXPECT_EQ(p[2], 0.0);
  adam_step(opt, p, g);
  EXPECT_NEAR(p[0], -2e-3, 1e-9);
  EXPECT_EQ(opt.step, 2);
}

TEST(Adam, RejectsBadInput) {
  OptimizerState opt(AdamConfig{}, 2);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd g(2);
  g << 1.0, std::nan("");
  EXPECT_THROW(adam_step(opt, p, g), std::domain_error);
  EXPECT_THROW(adam_step(opt, p, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Adam, MinimisesQuadratic) {
  AdamConfig c;
  c.learning_rate = 0.05;
  OptimizerState opt(c, 2);
  Eigen::VectorXd p(2);
  p << 3.0, -2.0;
  for (int i = 0; i < 2000; ++i) adam_step(opt, p, 2.0 * p);
  EXPECT_LT(p.norm(), 1e-3);
}

TEST(ClipByNorm, ScalesOnlyLargeGradients) {
  Eigen::VectorXd g(2);
  g << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(clip_by_norm(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g.norm(), 5.0);
  clip_by_norm(g, 1.0);
  EXPECT_NEAR(g.norm(), 1.0, 1e-15);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(9);
  Mlp net({3, 5, 2}, Activation::tanh);
  net.initialize(rng);
  const Mlp back = mlp_from_json(nlohmann::json::parse(to_json(net).dump()));
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(back.widths(), net.widths());
  auto j = to_json(net);
  j["version"] = 99;
  EXPECT_THROW(mlp_from_json(j), DataError);
  j = to_json(net);
  j["params"].erase(0);
  EXPECT_THROW(mlp_from_json(j), DataError);
}
