#include <gtest/gtest.h>

#include <cmath>

#include "uqscale/blr.hpp"
#include "uqscale/datasets.hpp"

using namespace uqscale;

namespace {

LabeledDataset regression(std::initializer_list<double> xs, std::initializer_list<double> ys) {
  LabeledDataset ds;
  ds.inputs.resize(static_cast<Eigen::Index>(xs.size()), 1);
  ds.targets.resize(static_cast<Eigen::Index>(ys.size()));
  Eigen::Index i = 0;
  for (double x : xs) ds.inputs(i++, 0) = x;
  i = 0;
  for (double y : ys) ds.targets(i++) = y;
  return ds;
}

BLRModel identity_model(Eigen::Index d, double noise_var, double prior_var = 1.0) {
  return {Basis::identity(d), Vector::Zero(d), prior_var * SymMatrix::identity(d), noise_var};
}

}  // namespace

TEST(BlrFit, NoDataReturnsPrior) {
  const BLRModel m = identity_model(3, 0.5, 2.0);
  LabeledDataset empty;
  empty.inputs.resize(0, 3);
  empty.targets.resize(0);
  const auto post = blr_fit(m, empty);
  EXPECT_TRUE(post.mean.isZero(0));
  EXPECT_TRUE(post.cov.matrix().isApprox(m.prior_cov.matrix(), 0));
}

TEST(BlrFit, OnePointHandAlgebra) {
  const BLRModel m = identity_model(1, 1.0);
  const auto post = blr_fit(m, regression({1.0}, {1.0}));
  EXPECT_NEAR(post.cov(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(post.mean(0), 0.5, 1e-15);
  Vector x(1);
  x << 1.0;
  const auto pred = blr_predict(post, m, x);
  EXPECT_NEAR(pred.variance, 1.5, 1e-15);
  EXPECT_NEAR(pred.epistemic_part, 0.5, 1e-15);
  EXPECT_NEAR(pred.mean, 0.5, 1e-15);
}

TEST(BlrFit, PosteriorConsistency) {
  Vector theta(2);
  theta << 2, -1;
  RngStream s(1, 0);
  const auto data = gen_linear_gaussian(10000, theta, 0.1, SymMatrix::identity(2), s);
  const auto post = blr_fit(identity_model(2, 0.01), data);
  EXPECT_LT((post.mean - theta).cwiseAbs().maxCoeff(), 0.02);
}

TEST(BlrFit, WidePriorApproachesLeastSquares) {
  Vector theta(3);
  theta << 0.5, -1, 2;
  RngStream s(2, 0);
  const auto data = gen_linear_gaussian(40, theta, 0.3, SymMatrix::identity(3), s);
  const auto post = blr_fit(identity_model(3, 0.09, 1e6), data);
  const Matrix& x = data.inputs;
  const Vector ols = (x.transpose() * x).ldlt().solve(x.transpose() * data.targets);
  EXPECT_LT((post.mean - ols).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(BlrPredict, ZeroFeatureHasNoEpistemicPart) {
  const BLRModel m = identity_model(2, 0.25);
  RngStream s(3, 0);
  const auto post = blr_fit(m, gen_linear_gaussian(20, Vector::Ones(2), 0.5, SymMatrix::identity(2), s));
  const auto pred = blr_predict(post, m, Vector::Zero(2));
  EXPECT_EQ(pred.epistemic_part, 0.0);
  EXPECT_EQ(pred.variance, 0.25);
  EXPECT_EQ(pred.eu(), 0.0);
}

TEST(BlrPredict, PriorPredictive) {
  const BLRModel m = identity_model(2, 0.25, 3.0);
  LabeledDataset empty;
  empty.inputs.resize(0, 2);
  empty.targets.resize(0);
  Vector x(2);
  x << 1, 2;
  const auto pred = blr_predict(blr_fit(m, empty), m, x);
  EXPECT_NEAR(pred.variance, 0.25 + 3.0 * 5.0, 1e-12);
}

TEST(BlrPredict, EntropyGapAdditivity) {
  const BLRModel m = identity_model(2, 0.3);
  RngStream s(4, 0);
  const auto post = blr_fit(m, gen_linear_gaussian(7, Vector::Ones(2), 0.5, SymMatrix::identity(2), s));
  Vector x(2);
  x << 0.7, -1.3;
  const auto pred = blr_predict(post, m, x);
  EXPECT_NEAR(pred.tu() - pred.au(), pred.eu(), 1e-13);
  EXPECT_NEAR(pred.eu(), 0.5 * std::log(1 + pred.epistemic_part / 0.3), 1e-15);
  EXPECT_DOUBLE_EQ(pred.variance, pred.aleatoric_part + pred.epistemic_part);
}

TEST(BlrTuAsymptotic, ZeroFeatureIsAleatoricEntropy) {
  EXPECT_EQ(blr_tu_asymptotic(Vector::Zero(2), 10, SymMatrix::identity(2), 0.5), gaussian_entropy(0.5));
}

// Exact vs expansion: the gap shrinks like 1/N^2, so N^2 * gap stays bounded.
TEST(BlrTuAsymptotic, ErrorIsSecondOrder) {
  const double noise = 0.25;
  const BLRModel m = identity_model(2, noise);
  Vector phi(2);
  phi << 0.8, -0.6;
  std::vector<double> scaled;
  for (int n : {200, 800, 3200, 12800}) {
    // Average the exact TU over datasets to approximate its expectation.
    double exact = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
      RngStream s(10, static_cast<std::uint64_t>(r));
      const auto data = gen_linear_gaussian(n, Vector::Ones(2), std::sqrt(noise), SymMatrix::identity(2), s);
      exact += blr_predict(blr_fit(m, data), m, phi).tu() / reps;
    }
    const double approx = blr_tu_asymptotic(phi, n, SymMatrix::identity(2), noise);
    scaled.push_back(std::abs(exact - approx) * n * n);
  }
  const double c = *std::max_element(scaled.begin(), scaled.end());
  EXPECT_LT(c, 20.0);
  EXPECT_LT(scaled.back(), 4.0 * scaled.front() + 1.0);
}

TEST(GeneralizationError, PerfectPosterior) {
  const BLRModel m = identity_model(2, 0.5);
  Vector theta(2);
  theta << 1, -2;
  GaussianPosterior exact{theta, SymMatrix::zero(2)};
  Vector x(2);
  x << 0.3, 0.4;
  const auto g = blr_generalization_error(exact, m, theta, 0.5, x);
  EXPECT_NEAR(g.g_n, 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 0.5), 1e-15);
  EXPECT_EQ(g.kl, 0.0);
}

TEST(GeneralizationError, AtLeastAleatoric) {
  const BLRModel m = identity_model(3, 0.2);
  RngStream s(5, 0);
  const Vector theta = Vector::Ones(3);
  const auto data = gen_linear_gaussian(15, theta, std::sqrt(0.2), SymMatrix::identity(3), s);
  const auto post = blr_fit(m, data);
  for (int i = 0; i < 50; ++i) {
    Vector x(3);
    for (int j = 0; j < 3; ++j) x(j) = s.standard_normal();
    const auto g = blr_generalization_error(post, m, theta, 0.2, x);
    EXPECT_GE(g.g_n, g.au);
    EXPECT_NEAR(g.g_n, g.au + g.kl, 1e-15);
  }
}

TEST(Contraction, NonIncreasingAndConvergesToNoise) {
  const BLRModel m = identity_model(2, 0.25);
  RngStream s(6, 0);
  const auto data = gen_linear_gaussian(300, Vector::Ones(2), 0.5, SymMatrix::identity(2), s);
  Matrix grid(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i) grid.row(i) << s.uniform(-2, 2), s.uniform(-2, 2);
  const Matrix trace = blr_contraction_trace(m, data, grid);
  ASSERT_EQ(trace.rows(), 301);
  for (Eigen::Index n = 0; n < 300; ++n)
    for (Eigen::Index j = 0; j < 10; ++j) EXPECT_LE(trace(n + 1, j), trace(n, j) + 1e-12);
  for (Eigen::Index j = 0; j < 10; ++j) EXPECT_LT(trace(300, j), 0.25 * 1.1);
  // Row 0 is the prior predictive.
  EXPECT_NEAR(trace(0, 0), 0.25 + grid.row(0).squaredNorm(), 1e-12);
}

TEST(Basis, PolynomialFeatures) {
  const Basis b = Basis::polynomial(2, 3);
  Vector x(2);
  x << 2.0, -1.0;
  const Vector phi = b(x);
  ASSERT_EQ(phi.size(), b.num_features());
  EXPECT_DOUBLE_EQ(phi(0), 1.0);
  // Powers of x0 then x1.
  EXPECT_DOUBLE_EQ(phi(1), 2.0);
  EXPECT_DOUBLE_EQ(phi(2), 4.0);
  EXPECT_DOUBLE_EQ(phi(3), 8.0);
  EXPECT_DOUBLE_EQ(phi(4), -1.0);
  EXPECT_DOUBLE_EQ(phi(6), -1.0);
}

TEST(Basis, RandomFeaturesDeterministic) {
  RngStream a(1, 0), b(1, 0);
  const Basis fa = Basis::random_features(2, 50, 0.7, a);
  const Basis fb = Basis::random_features(2, 50, 0.7, b);
  Vector x(2);
  x << 0.1, 0.2;
  EXPECT_TRUE(fa(x).cwiseEqual(fb(x)).all());
  EXPECT_EQ(fa.num_features(), 50);
}

TEST(BlrModel, Validation) {
  BLRModel m = identity_model(2, 1.0);
  m.noise_var = 0.0;
  EXPECT_THROW(m.validate(), Error);
  BLRModel wrong{Basis::identity(3), Vector::Zero(2), SymMatrix::identity(2), 1.0};
  EXPECT_THROW(wrong.validate(), Error);
}
