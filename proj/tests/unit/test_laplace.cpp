#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "uqscale/datasets.hpp"
#include "uqscale/laplace.hpp"

using namespace uqscale;

namespace {

ParamVector random_theta(const MLPSpec& spec, RngStream& s, double scale = 0.7) {
  ParamVector t(spec.num_params());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = scale * s.standard_normal();
  return t;
}

LabeledDataset empty_set(int dim) {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.inputs.resize(0, dim);
  return ds;
}

LabeledDataset duplicated(const LabeledDataset& d) {
  LabeledDataset out = d;
  out.inputs.resize(2 * d.size(), d.dim());
  out.inputs << d.inputs, d.inputs;
  out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
  return out;
}

}  // namespace

TEST(LambdaSoftmax, UniformLogits) {
  const SymMatrix l = lambda_softmax(Vector::Zero(2));
  EXPECT_DOUBLE_EQ(l(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(l(0, 1), -0.25);
  const SymMatrix l3 = lambda_softmax(Vector::Zero(3));
  EXPECT_NEAR(l3(0, 0), 2.0 / 9.0, 1e-15);
  EXPECT_NEAR(l3(1, 2), -1.0 / 9.0, 1e-15);
}

TEST(LambdaSoftmax, RowsSumToZeroAndPsd) {
  RngStream s(1, 0);
  for (int t = 0; t < 200; ++t) {
    Vector f(4);
    for (Eigen::Index i = 0; i < 4; ++i) f(i) = 3.0 * s.standard_normal();
    const SymMatrix l = lambda_softmax(f);
    EXPECT_LT(l.matrix().rowwise().sum().cwiseAbs().maxCoeff(), 1e-15);
    for (double e : sym_eigvals(l)) EXPECT_GE(e, -1e-14);
  }
}

TEST(GgnPosterior, NoDataIsPrior) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 4, 2});
  RngStream s(2, 0);
  const auto post = build_ggn_posterior(spec, random_theta(spec, s), empty_set(2), 2.5);
  EXPECT_TRUE(post.precision.matrix().isApprox(2.5 * Matrix::Identity(22, 22), 0));
  EXPECT_TRUE(post.data_precision().isZero(0));
}

TEST(GgnPosterior, MatchesFiniteDifferenceJacobianOracle) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 4, 2});
  RngStream s(3, 0);
  const ParamVector theta = random_theta(spec, s);
  const LabeledDataset data = gen_two_moons(20, {}, s);
  const Matrix ggn = ggn_data_term(spec, theta, data);
  const Eigen::Index p = spec.num_params();
  Matrix oracle = Matrix::Zero(p, p);
  const double h = 1e-6;
  for (Eigen::Index n = 0; n < data.size(); ++n) {
    const Vector x = data.inputs.row(n).transpose();
    Matrix jac(2, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      ParamVector tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      jac.col(i) = (mlp_forward(spec, tp, x) - mlp_forward(spec, tm, x)) / (2 * h);
    }
    const Vector f = mlp_forward(spec, theta, x);
    const Vector pi = softmax(f);
    Matrix lam = -pi * pi.transpose();
    lam.diagonal() += pi;
    oracle += jac.transpose() * lam * jac;
  }
  EXPECT_LT((ggn - oracle).cwiseAbs().maxCoeff() / std::max(1.0, oracle.cwiseAbs().maxCoeff()), 1e-4);
}

TEST(GgnPosterior, DuplicatedDataDoublesDataTerm) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 6, 2});
  RngStream s(4, 0);
  const ParamVector theta = random_theta(spec, s);
  const LabeledDataset data = gen_two_moons(30, {}, s);
  const auto a = build_ggn_posterior(spec, theta, data, 1.0);
  const auto b = build_ggn_posterior(spec, theta, duplicated(data), 1.0);
  EXPECT_LT((b.data_precision() - 2.0 * a.data_precision()).cwiseAbs().maxCoeff(), 1e-12);
  const auto ea = hessian_spectrum(a).eigenvalues;
  const auto eb = hessian_spectrum(b).eigenvalues;
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_NEAR(eb[i], 2.0 * ea[i], 1e-9 * std::max(1.0, eb[i]));
}

TEST(GgnPosterior, WorkerCountDoesNotChangeResult) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 6, 2});
  RngStream s(5, 0);
  const ParamVector theta = random_theta(spec, s);
  const LabeledDataset data = gen_two_moons(300, {}, s);
  const Matrix one = ggn_data_term(spec, theta, data, 1);
  const Matrix four = ggn_data_term(spec, theta, data, 4);
  EXPECT_TRUE(one.cwiseEqual(four).all());
}

TEST(GgnPosterior, ParameterCap) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 50, 50, 2});
  try {
    build_ggn_posterior(spec, ParamVector::Zero(spec.num_params()), empty_set(2), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParameterCapExceeded);
  }
}

TEST(GgnPosterior, SpectrumNonNegative) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 8, 2});
  RngStream s(6, 0);
  const auto post = build_ggn_posterior(spec, random_theta(spec, s), gen_two_moons(50, {}, s), 0.01);
  const auto sp = hessian_spectrum(post);
  for (double e : sp.eigenvalues) EXPECT_GE(e, 0.0);
  EXPECT_GE(sp.max_eig, sp.mean_eig);
}

TEST(LogitCovariance, PriorOnlyIsScaledJacobianGram) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 5, 3});
  RngStream s(7, 0);
  const ParamVector theta = random_theta(spec, s);
  const double lambda = 4.0;
  const auto post = build_ggn_posterior(spec, theta, empty_set(2), lambda);
  Vector x(2);
  x << 0.3, -0.8;
  const Matrix jac = mlp_jacobian(spec, theta, x);
  const LogitGaussian g = logit_covariance(post, spec, x);
  EXPECT_NEAR(g.eu_logit(), jac.squaredNorm() / lambda, 1e-12);
  EXPECT_LT((g.cov.matrix() - jac * jac.transpose() / lambda).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(g.diff_variance(), Error);
}

TEST(LogitCovariance, DiffVarianceFormula) {
  Matrix c(2, 2);
  c << 2.0, 0.5, 0.5, 1.0;
  const LogitGaussian g{Vector::Zero(2), SymMatrix(c)};
  EXPECT_DOUBLE_EQ(g.diff_variance(), 2.0);
  EXPECT_DOUBLE_EQ(g.eu_logit(), 3.0);
}

TEST(DeltaMethod, ClosedForms) {
  EXPECT_DOUBLE_EQ(delta_method_eu(Vector::Zero(2), 1.0), 0.0625);
  Vector f(2);
  f << 0.0, std::log(3.0);
  EXPECT_NEAR(delta_method_eu(f, 2.0), 2.0 * 0.1875 * 0.1875, 1e-15);
  EXPECT_EQ(delta_method_eu(f, 0.0), 0.0);
  try {
    delta_method_eu(Vector::Zero(3), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongHeadSize);
  }
}

TEST(GlmPredictive, CollapsedPosteriorHasNoEpistemicUncertainty) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 5, 2});
  RngStream s(8, 0);
  const auto post = build_ggn_posterior(spec, random_theta(spec, s), empty_set(2), 1e12);
  Vector x(2);
  x << 0.5, 0.5;
  RngStream mc(9, 0);
  const auto r = glm_predictive_mc(post, spec, x, 200, mc).report;
  EXPECT_LT(r.eu_var, 1e-10);
  EXPECT_LT(r.eu_ent, 1e-10);
  EXPECT_LT(r.eu_logit, 1e-10);
}

TEST(GlmPredictive, EntropyMetricMatchesDecomposition) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 6, 2});
  RngStream s(10, 0);
  const auto post = build_ggn_posterior(spec, random_theta(spec, s), gen_two_moons(20, {}, s), 0.5);
  for (int t = 0; t < 10; ++t) {
    Vector x(2);
    x << s.uniform(-2, 3), s.uniform(-1, 2);
    RngStream mc(11, static_cast<std::uint64_t>(t));
    const auto pred = glm_predictive_mc(post, spec, x, 500, mc);
    EXPECT_EQ(pred.report.eu_ent, decompose_entropy(pred.ensemble).eu);
    EXPECT_GE(pred.report.eu_ent, -1e-12);
    EXPECT_LE(pred.report.eu_ent, std::log(2.0));
    EXPECT_GE(pred.report.eu_var, 0.0);
    EXPECT_LE(pred.report.eu_var, 0.25 * 500.0 / 499.0);
    EXPECT_NEAR(pred.report.eu_var_delta, delta_method_eu(mlp_forward(spec, post.theta_map, x), pred.report.logit_diff_var),
                1e-15);
  }
}

TEST(GlmPredictive, SharedFactorGivesIdenticalDraws) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 6, 2});
  RngStream s(12, 0);
  const auto post = build_ggn_posterior(spec, random_theta(spec, s), gen_two_moons(20, {}, s), 0.5);
  const Matrix factor = posterior_sampling_factor(post);
  Vector x(2);
  x << 0.1, 0.2;
  RngStream a(13, 0), b(13, 0);
  const auto pa = glm_predictive_mc(post, spec, x, 100, a, &factor);
  const auto pb = glm_predictive_mc(post, spec, x, 100, b);
  EXPECT_TRUE(pa.ensemble.members.cwiseEqual(pb.ensemble.members).all());
  RngStream c(13, 0);
  EXPECT_THROW(glm_predictive_mc(post, spec, x, 1, c), Error);
}

// Unbiased variance estimator: the mean of many S = 1000 estimates agrees
// with a single large-S reference.
TEST(GlmPredictive, VarianceEstimateAgreesWithLargeSampleReference) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 6, 2});
  RngStream s(14, 0);
  const auto post = build_ggn_posterior(spec, random_theta(spec, s), gen_two_moons(10, {}, s), 1.0);
  const Matrix factor = posterior_sampling_factor(post);
  Vector x(2);
  x << 0.7, 0.1;
  RngStream ref_stream(15, 0);
  const double reference = glm_predictive_mc(post, spec, x, 200000, ref_stream, &factor).report.eu_var;
  std::vector<double> est;
  for (int r = 0; r < 40; ++r) {
    RngStream mc(16, static_cast<std::uint64_t>(r));
    est.push_back(glm_predictive_mc(post, spec, x, 1000, mc, &factor).report.eu_var);
  }
  double mean = 0.0;
  for (double e : est) mean += e / est.size();
  double var = 0.0;
  for (double e : est) var += (e - mean) * (e - mean) / (est.size() - 1);
  const double se = std::sqrt(var / est.size());
  EXPECT_GT(reference, 0.0);
  EXPECT_NEAR(mean, reference, 3.0 * se + 0.005 * reference);
}

// With lambda small next to the data term, doubling the data halves the
// posterior variance of the logit difference.
TEST(GlmPredictive, DuplicatedDataHalvesLogitDifferenceVariance) {
  const MLPSpec spec = MLPSpec::tanh_mlp({2, 4, 2});
  RngStream s(17, 0);
  const LabeledDataset data = gen_two_moons(200, {0.1, 0, 0}, s);
  TrainConfig tc;
  tc.prior_precision = 0.03 * 200;
  RngStream init(18, 0);
  const ParamVector theta = train_map(spec, data, tc, init).theta;
  const auto a = build_ggn_posterior(spec, theta, data, 1e-3);
  const auto b = build_ggn_posterior(spec, theta, duplicated(data), 1e-3);
  RngStream t(19, 0);
  const LabeledDataset test = gen_two_moons(50, {0.1, 0, 0}, t);
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const Vector x = test.inputs.row(i).transpose();
    const double va = logit_covariance(a, spec, x).diff_variance();
    const double vb = logit_covariance(b, spec, x).diff_variance();
    EXPECT_NEAR(vb / va, 0.5, 0.075) << i;
  }
}

TEST(LlaCell, BinaryHeadReportsDifferenceVariance) {
  LLAConfig cfg;
  cfg.hidden = {6};
  cfg.test_size = 20;
  cfg.mc_samples = 200;
  cfg.train.max_epochs = 300;
  const LabeledDataset test = lla_test_set(cfg);
  const LLACell cell = lla_cell(cfg, 1.0, 20, 0, test);
  EXPECT_GT(cell.eu_logit, 0.0);
  EXPECT_GT(cell.eu_logit_trace, 0.0);
  EXPECT_GE(cell.eu_ent, 0.0);
  EXPECT_GE(cell.eu_var, 0.0);
  const LLACell again = lla_cell(cfg, 1.0, 20, 0, test);
  EXPECT_EQ(cell.eu_logit, again.eu_logit);
  EXPECT_EQ(cell.eu_var, again.eu_var);
  EXPECT_EQ(cell.eu_ent, again.eu_ent);
}

TEST(LlaCell, SpectrumOnlyModeSkipsPredictive) {
  LLAConfig cfg;
  cfg.hidden = {6};
  cfg.test_size = 20;
  cfg.train.max_epochs = 300;
  cfg.eu_metrics = false;
  cfg.spectrum = true;
  const LLACell cell = lla_cell(cfg, 1.0, 20, 0, lla_test_set(cfg));
  EXPECT_EQ(cell.eu_logit, 0.0);
  EXPECT_GT(cell.max_eig, 0.0);
  EXPECT_GE(cell.max_eig, cell.mean_eig);
}
