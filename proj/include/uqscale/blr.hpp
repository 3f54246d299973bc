#pragma once

// Conjugate Bayesian linear regression with known noise variance.

#include <cmath>
#include <utility>
#include <vector>

#include "uqscale/datasets.hpp"
#include "uqscale/linalg.hpp"
#include "uqscale/rng.hpp"
#include "uqscale/uq_metrics.hpp"

namespace uqscale {

/// Feature map phi: R^D -> R^P.
class Basis {
 public:
  enum class Kind { identity, polynomial, random_features };

  static Basis identity(Eigen::Index input_dim) {
    Basis b;
    b.kind_ = Kind::identity;
    b.input_dim_ = input_dim;
    return b;
  }

  /// [1, x, x^2, ..., x^degree] per input coordinate (no cross terms).
  static Basis polynomial(Eigen::Index input_dim, int degree) {
    require(degree >= 1, ErrorCode::InvalidArgument, "polynomial degree must be >= 1");
    Basis b;
    b.kind_ = Kind::polynomial;
    b.input_dim_ = input_dim;
    b.degree_ = degree;
    return b;
  }

  /// sqrt(2/P) cos(w_j . x + b_j) with w_j ~ N(0, I / lengthscale^2), b_j ~ U[0, 2 pi].
  static Basis random_features(Eigen::Index input_dim, Eigen::Index count, double lengthscale,
                               RngStream& stream) {
    require(count >= 1 && lengthscale > 0.0, ErrorCode::InvalidArgument, "bad random feature params");
    Basis b;
    b.kind_ = Kind::random_features;
    b.input_dim_ = input_dim;
    b.weights_.resize(count, input_dim);
    b.offsets_.resize(count);
    for (Eigen::Index j = 0; j < count; ++j) {
      for (Eigen::Index d = 0; d < input_dim; ++d) b.weights_(j, d) = stream.standard_normal() / lengthscale;
      b.offsets_(j) = 2.0 * std::numbers::pi * stream.uniform01();
    }
    return b;
  }

  Kind kind() const { return kind_; }
  Eigen::Index input_dim() const { return input_dim_; }

  Eigen::Index num_features() const {
    switch (kind_) {
      case Kind::identity: return input_dim_;
      case Kind::polynomial: return 1 + input_dim_ * degree_;
      case Kind::random_features: return weights_.rows();
    }
    return 0;
  }

  Vector operator()(const Vector& x) const {
    require(x.size() == input_dim_, ErrorCode::DimensionMismatch, "basis input dimension");
    switch (kind_) {
      case Kind::identity: return x;
      case Kind::polynomial: {
        Vector phi(num_features());
        phi(0) = 1.0;
        Eigen::Index k = 1;
        for (Eigen::Index d = 0; d < input_dim_; ++d) {
          double power = 1.0;
          for (int p = 1; p <= degree_; ++p) {
            power *= x(d);
            phi(k++) = power;
          }
        }
        return phi;
      }
      case Kind::random_features: {
        const double scale = std::sqrt(2.0 / static_cast<double>(weights_.rows()));
        return scale * ((weights_ * x + offsets_).array().cos()).matrix();
      }
    }
    return {};
  }

  /// Design matrix Phi (N x P).
  Matrix design(const Matrix& inputs) const {
    require(inputs.cols() == input_dim_, ErrorCode::DimensionMismatch, "design input dimension");
    if (kind_ == Kind::identity) return inputs;
    Matrix phi(inputs.rows(), num_features());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) phi.row(i) = (*this)(inputs.row(i).transpose()).transpose();
    return phi;
  }

 private:
  Kind kind_ = Kind::identity;
  Eigen::Index input_dim_ = 0;
  int degree_ = 0;
  Matrix weights_;
  Vector offsets_;
};

struct BLRModel {
  Basis basis;
  Vector prior_mean;
  SymMatrix prior_cov;
  double noise_var = 1.0;

  /// m0 = 0, S0 = I.
  static BLRModel with_default_prior(Basis basis, double noise_var) {
    const Eigen::Index p = basis.num_features();
    require(noise_var > 0.0, ErrorCode::NonPositiveVariance, "noise variance must be > 0");
    return {std::move(basis), Vector::Zero(p), SymMatrix::identity(p), noise_var};
  }

  void validate() const {
    require(noise_var > 0.0, ErrorCode::NonPositiveVariance, "noise variance must be > 0");
    require(prior_mean.size() == basis.num_features() && prior_cov.dim() == basis.num_features(),
            ErrorCode::DimensionMismatch, "prior dimensions must match the feature count");
  }
};

struct GaussianPosterior {
  Vector mean;
  SymMatrix cov;
};

/// variance == aleatoric_part + epistemic_part.
struct PredictiveGaussian {
  double mean = 0.0;
  double variance = 0.0;
  double aleatoric_part = 0.0;
  double epistemic_part = 0.0;

  /// Entropy of the predictive, 1/2 ln(2 pi e variance).
  double tu() const { return gaussian_entropy(variance); }
  double au() const { return gaussian_entropy(aleatoric_part); }
  /// Entropy gap tu - au = 1/2 ln(1 + epistemic / aleatoric).
  double eu() const { return 0.5 * std::log1p(epistemic_part / aleatoric_part); }
};

/// Posterior from sufficient statistics Phi^T Phi and Phi^T y.
inline GaussianPosterior blr_posterior_from_stats(const BLRModel& model, const Matrix& gram,
                                                  const Vector& phi_t_y) {
  model.validate();
  const Eigen::Index p = model.basis.num_features();
  require(gram.rows() == p && gram.cols() == p && phi_t_y.size() == p, ErrorCode::DimensionMismatch,
          "sufficient statistics have the wrong size");
  const SymMatrix prior_precision = spd_inverse(model.prior_cov);
  const double inv_noise = 1.0 / model.noise_var;
  const SymMatrix precision = SymMatrix::from_nearly_symmetric(inv_noise * gram + prior_precision.matrix());
  const Vector rhs = prior_precision.matrix() * model.prior_mean + inv_noise * phi_t_y;
  Matrix rhs_block(p, p + 1);
  rhs_block.leftCols(p) = Matrix::Identity(p, p);
  rhs_block.col(p) = rhs;
  const Matrix sol = spd_solve(precision, rhs_block).x;
  return {sol.col(p), SymMatrix::from_nearly_symmetric(sol.leftCols(p))};
}

/// S_N = (Phi^T Phi / sigma^2 + S0^-1)^-1, m_N = S_N (S0^-1 m0 + Phi^T y / sigma^2).
inline GaussianPosterior blr_fit(const BLRModel& model, const LabeledDataset& data) {
  require(!data.is_classification(), ErrorCode::InvalidArgument, "blr_fit needs real targets");
  require(data.targets.size() == data.size(), ErrorCode::DimensionMismatch, "target count");
  if (data.size() == 0) {
    model.validate();
    return {model.prior_mean, model.prior_cov};
  }
  const Matrix phi = model.basis.design(data.inputs);
  return blr_posterior_from_stats(model, phi.transpose() * phi, phi.transpose() * data.targets);
}

inline PredictiveGaussian blr_predict(const GaussianPosterior& post, const BLRModel& model, const Vector& x_star) {
  const Vector phi = model.basis(x_star);
  require(phi.size() == post.mean.size(), ErrorCode::DimensionMismatch, "posterior / feature size");
  PredictiveGaussian out;
  out.mean = post.mean.dot(phi);
  out.aleatoric_part = model.noise_var;
  out.epistemic_part = std::max(0.0, phi.dot(post.cov.matrix() * phi));
  out.variance = out.aleatoric_part + out.epistemic_part;
  return out;
}

/// Large-N expansion of the predictive entropy:
/// 1/2 ln(2 pi e sigma^2) + phi^T Sigma_phi^-1 phi / (2N).
inline double blr_tu_asymptotic(const Vector& phi, double n, const SymMatrix& feature_cov, double noise_var) {
  require(n >= 1.0, ErrorCode::InvalidCount, "N must be >= 1");
  require(phi.size() == feature_cov.dim(), ErrorCode::DimensionMismatch, "feature / covariance size");
  const Vector solved = spd_solve(feature_cov, phi, JitterPolicy{.max_retries = 0}).x.col(0);
  return gaussian_entropy(noise_var) + phi.dot(solved) / (2.0 * n);
}

struct GeneralizationError {
  double g_n = 0.0;
  double au = 0.0;
  double kl = 0.0;
};

/// Expected negative log predictive density of the next point under the true
/// process, split as entropy of the truth plus KL(truth || predictive).
inline GeneralizationError blr_generalization_error(const GaussianPosterior& post, const BLRModel& model,
                                                    const Vector& theta_true, double sigma_true_sq,
                                                    const Vector& x_next) {
  require(model.basis.kind() == Basis::Kind::identity, ErrorCode::InvalidArgument,
          "generalization error is defined for the identity basis");
  require(sigma_true_sq > 0.0, ErrorCode::NonPositiveVariance, "true noise variance must be > 0");
  require(theta_true.size() == x_next.size() && post.mean.size() == x_next.size(), ErrorCode::DimensionMismatch,
          "theta_true / x_next / posterior size");
  const double mu_true = theta_true.dot(x_next);
  const double mu_pred = post.mean.dot(x_next);
  const double var_pred = sigma_true_sq + std::max(0.0, x_next.dot(post.cov.matrix() * x_next));
  GeneralizationError out;
  out.au = gaussian_entropy(sigma_true_sq);
  out.kl = gaussian_kl(mu_true, sigma_true_sq, mu_pred, var_pred);
  out.g_n = out.au + out.kl;
  return out;
}

/// Predictive variances at each probe point for every prefix N = 0..data.size().
/// Row N holds sigma_N^2 over x_grid (rows of the matrix).
inline Matrix blr_contraction_trace(const BLRModel& model, const LabeledDataset& data, const Matrix& x_grid) {
  model.validate();
  const Eigen::Index p = model.basis.num_features();
  const Matrix phi = model.basis.design(data.inputs);
  const Matrix probe = model.basis.design(x_grid);
  Matrix out(data.size() + 1, x_grid.rows());
  Matrix gram = Matrix::Zero(p, p);
  Vector phi_t_y = Vector::Zero(p);
  for (Eigen::Index n = 0; n <= data.size(); ++n) {
    if (n > 0) {
      const Vector row = phi.row(n - 1).transpose();
      gram.noalias() += row * row.transpose();
      phi_t_y += data.targets(n - 1) * row;
    }
    const GaussianPosterior post = blr_posterior_from_stats(model, gram, phi_t_y);
    for (Eigen::Index j = 0; j < probe.rows(); ++j) {
      const Vector f = probe.row(j).transpose();
      out(n, j) = model.noise_var + std::max(0.0, f.dot(post.cov.matrix() * f));
    }
  }
  return out;
}

}  // namespace uqscale
