#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "uqscale/datasets.hpp"
#include "uqscale/samplers.hpp"

using namespace uqscale;

namespace {

LogDensityFn diagonal_gaussian(const Vector& mean, const Vector& sd) {
  return [mean, sd](const Vector& q) {
    const Vector z = (q - mean).cwiseQuotient(sd);
    return DensityEval{-0.5 * z.squaredNorm(), -z.cwiseQuotient(sd)};
  };
}

// U(x) = (x^2 - 1)^2, two modes at +-1 separated by a unit barrier.
DensityEval double_well(const Vector& q) {
  const double x = q(0);
  Vector g(1);
  g(0) = -4.0 * x * (x * x - 1.0);
  return {-(x * x - 1.0) * (x * x - 1.0), g};
}

}  // namespace

TEST(Hmc, StandardNormalTenDimensions) {
  const Vector mean = Vector::LinSpaced(10, -1.0, 1.0);
  const Vector sd = Vector::Ones(10);
  HMCConfig cfg;
  cfg.step_size = 0.15;
  cfg.leapfrog_steps = 10;
  cfg.warmup = 500;
  cfg.samples = 2000;
  RngStream s(1, 0);
  const auto out = hmc_sample(diagonal_gaussian(mean, sd), Vector::Zero(10), cfg, s);
  ASSERT_EQ(out.draws.rows(), 2000);
  const Eigen::RowVectorXd m = out.draws.colwise().mean();
  const Matrix centered = out.draws.rowwise() - m;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / (out.draws.rows() - 1.0);
  for (Eigen::Index j = 0; j < 10; ++j) {
    EXPECT_NEAR(m(j), mean(j), 0.05) << j;
    EXPECT_NEAR(var(j), 1.0, 0.1) << j;
  }
  EXPECT_GT(out.accept_rate, 0.8);
}

TEST(Hmc, TinyStepAcceptsAlmostEverything) {
  HMCConfig cfg;
  cfg.step_size = 1e-4;
  cfg.leapfrog_steps = 5;
  cfg.warmup = 10;
  cfg.samples = 500;
  RngStream s(2, 0);
  const auto out = hmc_sample(diagonal_gaussian(Vector::Zero(3), Vector::Ones(3)), Vector::Ones(3), cfg, s);
  EXPECT_GT(out.accept_rate, 0.99);
  EXPECT_EQ(out.final_step_size, 1e-4);
}

TEST(Hmc, Deterministic) {
  HMCConfig cfg;
  cfg.warmup = 50;
  cfg.samples = 50;
  cfg.adapt_step_size = true;
  RngStream a(3, 7), b(3, 7);
  const auto target = diagonal_gaussian(Vector::Zero(4), Vector::Ones(4));
  const auto x = hmc_sample(target, Vector::Ones(4), cfg, a);
  const auto y = hmc_sample(target, Vector::Ones(4), cfg, b);
  EXPECT_TRUE(x.draws.cwiseEqual(y.draws).all());
  EXPECT_EQ(x.final_step_size, y.final_step_size);
}

TEST(Hmc, AdaptationReachesTargetAcceptance) {
  HMCConfig cfg;
  cfg.step_size = 2.0;
  cfg.leapfrog_steps = 10;
  cfg.warmup = 1000;
  cfg.samples = 2000;
  cfg.adapt_step_size = true;
  RngStream s(4, 0);
  const auto out = hmc_sample(diagonal_gaussian(Vector::Zero(20), Vector::Ones(20)), Vector::Zero(20), cfg, s);
  EXPECT_NEAR(out.accept_rate, 0.8, 0.1);
  EXPECT_LT(out.final_step_size, 2.0);
}

// Histogram of 50k draws against the normalized density exp(-(x^2-1)^2).
TEST(Hmc, DoubleWellTotalVariation) {
  HMCConfig cfg;
  cfg.step_size = 0.1;
  cfg.leapfrog_steps = 15;
  cfg.warmup = 1000;
  cfg.samples = 50000;
  RngStream s(5, 0);
  Vector init(1);
  init << 1.0;
  const auto out = hmc_sample(double_well, init, cfg, s);

  const double lo = -2.5, hi = 2.5;
  const int bins = 25;
  const double width = (hi - lo) / bins;
  std::vector<double> exact(bins, 0.0);
  double z = 0.0;
  const int sub = 400;
  for (int b = 0; b < bins; ++b) {
    for (int k = 0; k < sub; ++k) {
      const double x = lo + (b + (k + 0.5) / sub) * width;
      exact[static_cast<std::size_t>(b)] += std::exp(-(x * x - 1) * (x * x - 1)) * width / sub;
    }
    z += exact[static_cast<std::size_t>(b)];
  }
  std::vector<double> hist(bins, 0.0);
  for (Eigen::Index k = 0; k < out.draws.rows(); ++k) {
    const int b = static_cast<int>(std::floor((out.draws(k, 0) - lo) / width));
    if (b >= 0 && b < bins) hist[static_cast<std::size_t>(b)] += 1.0 / out.draws.rows();
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) tv += 0.5 * std::abs(hist[static_cast<std::size_t>(b)] - exact[static_cast<std::size_t>(b)] / z);
  EXPECT_LT(tv, 0.05);
  // Both modes visited.
  int left = 0;
  for (Eigen::Index k = 0; k < out.draws.rows(); ++k) left += out.draws(k, 0) < 0;
  EXPECT_NEAR(left / 50000.0, 0.5, 0.1);
}

TEST(Hmc, ZeroAcceptance) {
  HMCConfig cfg;
  cfg.step_size = 50.0;
  cfg.leapfrog_steps = 20;
  cfg.warmup = 0;
  cfg.samples = 200;
  RngStream s(6, 0);
  Vector sd = Vector::Constant(5, 1e-3);
  try {
    hmc_sample(diagonal_gaussian(Vector::Zero(5), sd), Vector::Zero(5), cfg, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroAcceptance);
  }
}

TEST(Hmc, NonFiniteInitialPoint) {
  const LogDensityFn bad = [](const Vector& q) { return DensityEval{std::nan(""), Vector::Zero(q.size())}; };
  RngStream s(7, 0);
  try {
    hmc_sample(bad, Vector::Zero(2), HMCConfig{}, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
  }
}

TEST(BnnPosterior, GradientMatchesLoss) {
  RngStream s(8, 0);
  const LabeledDataset data = gen_two_moons(20, {}, s);
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 4, 2});
  const auto target = bnn_log_posterior(spec, data, 2.0);
  ParamVector theta(spec.num_params());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = 0.5 * s.standard_normal();
  const auto lg = mlp_loss_grad(spec, theta, data, 0.25);
  const auto d = target(theta);
  EXPECT_EQ(d.log_density, -lg.loss);
  EXPECT_TRUE(d.grad.cwiseEqual(-lg.grad).all());
}

TEST(EnsembleDecomposition, IdenticalDrawsHaveZeroEu) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 5, 2});
  RngStream s(9, 0);
  ParamVector theta(spec.num_params());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = s.standard_normal();
  const Matrix draws = theta.transpose().replicate(8, 1);
  const LabeledDataset test = gen_two_moons(30, {}, s);
  const auto t = average_decomposition(draws, spec, test.inputs, EnsembleSource::hmc);
  EXPECT_NEAR(t.eu, 0.0, 1e-12);
  const auto one = average_decomposition(draws.topRows(1), spec, test.inputs, EnsembleSource::hmc);
  EXPECT_EQ(one.tu, one.au);
}

TEST(EnsembleDecomposition, BatchMatchesPerPointPredict) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 5, 2});
  RngStream s(10, 0);
  PosteriorSamples ps;
  ps.draws.resize(6, spec.num_params());
  for (Eigen::Index k = 0; k < 6; ++k)
    for (Eigen::Index i = 0; i < spec.num_params(); ++i) ps.draws(k, i) = s.standard_normal();
  const LabeledDataset test = gen_two_moons(12, {}, s);
  const auto probs = batch_member_probs(ps.draws, spec, test.inputs);
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const auto e = bnn_posterior_predict(ps, spec, test.inputs.row(i).transpose());
    for (Eigen::Index k = 0; k < 6; ++k)
      EXPECT_LT((e.members.row(k) - probs[static_cast<std::size_t>(k)].row(i)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(McDropout, ZeroRateHasNoEpistemicUncertainty) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 8, 2});
  RngStream s(11, 0);
  ParamVector theta(spec.num_params());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = s.standard_normal();
  Vector x(2);
  x << 0.5, -0.2;
  const auto e = mcd_predict(spec, theta, x, 0.0, 50, s);
  EXPECT_NEAR(decompose_entropy(e).eu, 0.0, 1e-12);
  const auto d = mcd_predict(spec, theta, x, 0.5, 50, s);
  EXPECT_GT(decompose_entropy(d).eu, 0.0);
  EXPECT_THROW(mcd_predict(spec, theta, x, 1.0, 5, s), Error);
}

TEST(DeepEnsemble, MembersDifferAndSingleMemberHasZeroEu) {
  RngStream s(12, 0);
  const LabeledDataset data = gen_two_moons(40, {}, s);
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 8, 2});
  TrainConfig cfg;
  cfg.max_epochs = 300;
  std::vector<RngStream> seeds;
  for (std::uint64_t m = 0; m < 5; ++m) seeds.emplace_back(13, m);
  const auto members = deep_ensemble_train(spec, data, cfg, seeds);
  ASSERT_EQ(members.size(), 5u);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) EXPECT_FALSE(members[a].cwiseEqual(members[b]).all());
  Vector x(2);
  x << 3.0, 3.0;
  EXPECT_GT(decompose_entropy(deep_ensemble_predict(members, spec, x)).eu, 0.0);
  const std::vector<ParamVector> single{members[0]};
  EXPECT_EQ(decompose_entropy(deep_ensemble_predict(single, spec, x)).eu, 0.0);
  EXPECT_EQ(stack_members(members).rows(), 5);
  EXPECT_THROW(deep_ensemble_train(spec, data, cfg, {}), Error);
}
