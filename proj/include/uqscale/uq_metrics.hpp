#pragma once

// Entropy and variance decompositions of predictive ensembles into total,
// aleatoric and epistemic parts. All entropies are in nats.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "uqscale/linalg.hpp"

namespace uqscale {

/// Probabilities are clamped to this floor before taking logs.
inline constexpr double kProbFloor = 1e-12;

/// A point on the probability simplex.
class ProbVector {
 public:
  explicit ProbVector(Vector probs) : p_(std::move(probs)) {
    require(p_.size() >= 1, ErrorCode::InvalidSimplex, "empty probability vector");
    for (Eigen::Index i = 0; i < p_.size(); ++i)
      require(p_(i) >= 0.0 && p_(i) <= 1.0, ErrorCode::InvalidSimplex, "entry outside [0, 1]");
    require(std::abs(p_.sum() - 1.0) <= 1e-9, ErrorCode::InvalidSimplex, "entries do not sum to 1");
  }
  ProbVector(std::initializer_list<double> probs)
      : ProbVector(Vector(Eigen::Map<const Vector>(probs.begin(), static_cast<Eigen::Index>(probs.size())))) {}

  const Vector& probs() const { return p_; }
  Eigen::Index num_classes() const { return p_.size(); }

 private:
  Vector p_;
};

enum class EnsembleSource { mcd, deep_ensemble, hmc, laplace_mc };

constexpr std::string_view to_string(EnsembleSource s) {
  switch (s) {
    case EnsembleSource::mcd: return "mcd";
    case EnsembleSource::deep_ensemble: return "deep_ensemble";
    case EnsembleSource::hmc: return "hmc";
    case EnsembleSource::laplace_mc: return "laplace_mc";
  }
  return "unknown";
}

/// K x C matrix; each row is one member's predictive distribution.
struct PredictiveEnsemble {
  Matrix members;
  EnsembleSource source = EnsembleSource::mcd;

  Eigen::Index size() const { return members.rows(); }
  Eigen::Index num_classes() const { return members.cols(); }

  /// Validates every row against the simplex invariants.
  void validate() const {
    require(members.rows() >= 1, ErrorCode::EmptyEnsemble, "ensemble has no members");
    for (Eigen::Index k = 0; k < members.rows(); ++k) {
      for (Eigen::Index c = 0; c < members.cols(); ++c) {
        const double v = members(k, c);
        require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidSimplex, "member entry outside [0, 1]");
      }
      require(std::abs(members.row(k).sum() - 1.0) <= 1e-9, ErrorCode::InvalidSimplex,
              "member does not sum to 1");
    }
  }
};

/// `eu` keeps the raw difference tu - au, which may be a rounding-level
/// negative; eu_reported() floors it at zero.
struct UncertaintyTriple {
  double tu = 0.0;
  double au = 0.0;
  double eu = 0.0;

  double eu_reported() const { return std::max(0.0, eu); }
};

struct MomentDecomposition {
  SymMatrix tu_cov;
  SymMatrix au_cov;
  SymMatrix eu_cov;
};

namespace detail {

inline double neg_p_log_p(double p) { return -p * std::log(std::max(p, kProbFloor)); }

/// Sum that does not depend on the order of its inputs (sorts first).
inline double order_free_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

inline double entropy_of(const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < p.size(); ++c) h += neg_p_log_p(p(c));
  return h;
}

}  // namespace detail

inline double shannon_entropy(const ProbVector& p) {
  return detail::entropy_of(p.probs().transpose());
}

/// Ensemble mean, summed in a member-order-independent way.
inline Eigen::RowVectorXd ensemble_mean(const PredictiveEnsemble& e) {
  const Eigen::Index k = e.size();
  Eigen::RowVectorXd mean(e.num_classes());
  std::vector<double> column(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < e.num_classes(); ++c) {
    for (Eigen::Index i = 0; i < k; ++i) column[static_cast<std::size_t>(i)] = e.members(i, c);
    mean(c) = detail::order_free_sum(column) / static_cast<double>(k);
  }
  return mean;
}

/// TU = H[mean member], AU = mean member entropy, EU = TU - AU (mutual
/// information between the prediction and the member index).
inline UncertaintyTriple decompose_entropy(const PredictiveEnsemble& e) {
  require(e.size() >= 1, ErrorCode::EmptyEnsemble, "decompose_entropy on empty ensemble");
  const Eigen::Index k = e.size();
  UncertaintyTriple out;
  out.tu = detail::entropy_of(ensemble_mean(e));
  std::vector<double> entropies(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) entropies[static_cast<std::size_t>(i)] = detail::entropy_of(e.members.row(i));
  out.au = detail::order_free_sum(std::move(entropies)) / static_cast<double>(k);
  if (k == 1) out.au = out.tu;
  out.eu = out.tu - out.au;
  return out;
}

/// Law of total variance on the one-hot target. eu_cov uses the population
/// (1/K) covariance of the member probabilities, so tu_cov equals
/// diag(mean) - mean mean^T.
inline MomentDecomposition decompose_variance(const PredictiveEnsemble& e) {
  require(e.size() >= 1, ErrorCode::EmptyEnsemble, "decompose_variance on empty ensemble");
  require(e.size() >= 2, ErrorCode::SingleMember, "eu_cov needs at least two members");
  const Eigen::Index k = e.size();
  const Eigen::Index c = e.num_classes();
  const Eigen::RowVectorXd mean = ensemble_mean(e);
  Matrix au = Matrix::Zero(c, c);
  Matrix eu = Matrix::Zero(c, c);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::RowVectorXd p = e.members.row(i);
    au.diagonal() += p.transpose();
    au.noalias() -= p.transpose() * p;
    const Eigen::RowVectorXd d = p - mean;
    eu.noalias() += d.transpose() * d;
  }
  au /= static_cast<double>(k);
  eu /= static_cast<double>(k);
  return {SymMatrix::from_nearly_symmetric(au + eu), SymMatrix::from_nearly_symmetric(au),
          SymMatrix::from_nearly_symmetric(eu)};
}

inline double gaussian_entropy(double variance) {
  require(variance > 0.0, ErrorCode::NonPositiveVariance, "gaussian_entropy needs variance > 0");
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * variance);
}

/// KL[N(mu1, var1) || N(mu2, var2)].
inline double gaussian_kl(double mu1, double var1, double mu2, double var2) {
  require(var1 > 0.0 && var2 > 0.0, ErrorCode::NonPositiveVariance, "gaussian_kl needs positive variances");
  const double d = mu1 - mu2;
  return 0.5 * std::log(var2 / var1) + (var1 + d * d) / (2.0 * var2) - 0.5;
}

/// Componentwise mean over test points.
inline UncertaintyTriple average_metrics(std::span<const UncertaintyTriple> per_point) {
  require(!per_point.empty(), ErrorCode::EmptyList, "average_metrics on empty list");
  UncertaintyTriple sum;
  for (const auto& t : per_point) {
    sum.tu += t.tu;
    sum.au += t.au;
    sum.eu += t.eu;
  }
  const double n = static_cast<double>(per_point.size());
  return {sum.tu / n, sum.au / n, sum.eu / n};
}

/// Second-order expansion of the mutual information around the mean
/// prediction: 0.5 * tr(F(p) V[p]) with F(p) = diag(1 / p).
inline double mutual_information_second_order(const Eigen::RowVectorXd& mean, const SymMatrix& eu_cov) {
  require(mean.size() == eu_cov.dim(), ErrorCode::DimensionMismatch, "mean / covariance size");
  double s = 0.0;
  for (Eigen::Index c = 0; c < mean.size(); ++c) s += eu_cov(c, c) / std::max(mean(c), kProbFloor);
  return 0.5 * s;
}

}  // namespace uqscale
