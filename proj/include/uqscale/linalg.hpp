#pragma once

// Dense symmetric linear algebra on top of Eigen storage.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "uqscale/errors.hpp"

namespace uqscale {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Square symmetric matrix. Construction checks symmetry to 1e-12 relative
/// and stores the exactly symmetrized average (A + A^T) / 2.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    require(m_.rows() == m_.cols() && m_.rows() >= 1, ErrorCode::DimensionMismatch,
            "SymMatrix must be square with dim >= 1");
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-12 * scale, ErrorCode::InvalidArgument, "SymMatrix input is not symmetric");
    symmetrize();
  }

  /// Symmetrizes without the tolerance check; for products like J S J^T
  /// that are symmetric only up to rounding.
  static SymMatrix from_nearly_symmetric(Matrix m) {
    require(m.rows() == m.cols() && m.rows() >= 1, ErrorCode::DimensionMismatch,
            "SymMatrix must be square with dim >= 1");
    SymMatrix s;
    s.m_ = std::move(m);
    s.symmetrize();
    return s;
  }

  static SymMatrix identity(Eigen::Index dim) { return SymMatrix(Matrix::Identity(dim, dim)); }
  static SymMatrix diagonal(const Vector& d) { return SymMatrix(Matrix(d.asDiagonal())); }
  static SymMatrix zero(Eigen::Index dim) { return SymMatrix(Matrix::Zero(dim, dim)); }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

 private:
  void symmetrize() {
    Matrix t = 0.5 * (m_ + m_.transpose());
    m_ = std::move(t);
  }

  Matrix m_;
};

inline SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
  require(a.dim() == b.dim(), ErrorCode::DimensionMismatch, "SymMatrix sum");
  return SymMatrix::from_nearly_symmetric(a.matrix() + b.matrix());
}

inline SymMatrix operator*(double s, const SymMatrix& a) {
  return SymMatrix::from_nearly_symmetric(s * a.matrix());
}

struct JitterPolicy {
  double initial_scale = 1e-10;  // times trace(a)/dim
  double growth = 10.0;
  int max_retries = 6;
};

struct SolveResult {
  Matrix x;
  double jitter = 0.0;
};

namespace detail {

inline double jitter_base(const SymMatrix& a, const JitterPolicy& policy) {
  double base = a.trace() / static_cast<double>(a.dim());
  if (!(base > 0.0)) base = a.matrix().diagonal().cwiseAbs().mean();
  if (!(base > 0.0)) base = 1.0;
  return policy.initial_scale * base;
}

// Runs LLT with escalating diagonal jitter; returns the factor and the jitter used.
inline std::pair<Eigen::LLT<Matrix>, double> factor_with_jitter(const SymMatrix& a,
                                                                 const JitterPolicy& policy) {
  Eigen::LLT<Matrix> llt(a.matrix());
  if (llt.info() == Eigen::Success) return {std::move(llt), 0.0};
  double jitter = jitter_base(a, policy);
  const Eigen::Index n = a.dim();
  for (int retry = 0; retry < policy.max_retries; ++retry) {
    llt.compute(a.matrix() + jitter * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) return {std::move(llt), jitter};
    jitter *= policy.growth;
  }
  fail(ErrorCode::NotPositiveDefinite, "Cholesky failed at maximum jitter");
}

}  // namespace detail

/// Solves a x = b for symmetric positive definite a, escalating diagonal
/// jitter if the plain factorization fails.
inline SolveResult spd_solve(const SymMatrix& a, const Matrix& b, const JitterPolicy& policy = {}) {
  require(b.rows() == a.dim(), ErrorCode::DimensionMismatch, "spd_solve: rhs rows != dim");
  auto [llt, jitter] = detail::factor_with_jitter(a, policy);
  SolveResult out{llt.solve(b), jitter};
  const double bnorm = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
  const double resid = b.size() ? (a.matrix() * out.x - b).cwiseAbs().maxCoeff() : 0.0;
  if (!std::isfinite(resid)) fail(ErrorCode::NotPositiveDefinite, "spd_solve produced non-finite values");
  // With jitter the residual reflects the perturbation; only the unjittered
  // solve is held to the tight tolerance.
  if (jitter == 0.0 && resid / (1.0 + bnorm) > 1e-8) {
    // One step of iterative refinement recovers ill-conditioned cases.
    out.x += llt.solve(b - a.matrix() * out.x);
  }
  return out;
}

inline SolveResult spd_solve(const SymMatrix& a, const Vector& b, const JitterPolicy& policy = {}) {
  return spd_solve(a, Matrix(b), policy);
}

/// Inverse of an SPD matrix through spd_solve.
inline SymMatrix spd_inverse(const SymMatrix& a, const JitterPolicy& policy = {}) {
  return SymMatrix::from_nearly_symmetric(
      spd_solve(a, Matrix(Matrix::Identity(a.dim(), a.dim())), policy).x);
}

/// Lower Cholesky factor, with the same jitter escalation as spd_solve.
inline Matrix cholesky_lower(const SymMatrix& a, const JitterPolicy& policy = {}) {
  auto [llt, jitter] = detail::factor_with_jitter(a, policy);
  (void)jitter;
  return llt.matrixL();
}

/// Ascending eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> sym_eigvals(const SymMatrix& a, int max_sweeps = 100) {
  Matrix m = a.matrix();
  const Eigen::Index n = m.rows();
  const double scale = std::max(m.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < j; ++i) off += m(i, j) * m(i, j);
    if (std::sqrt(off) <= 1e-15 * scale * static_cast<double>(n)) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= std::numeric_limits<double>::min()) continue;
        const double app = m(p, p);
        const double aqq = m(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // Columns are contiguous in Eigen's default storage.
        for (Eigen::Index k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        m(p, q) = 0.0;
        m(q, p) = 0.0;
      }
    }
  }

  std::vector<double> eig(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = m(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

/// Non-square input is a DimensionMismatch rather than a construction error.
inline std::vector<double> sym_eigvals(const Matrix& a) {
  require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "sym_eigvals: non-square input");
  return sym_eigvals(SymMatrix::from_nearly_symmetric(a));
}

}  // namespace uqscale
