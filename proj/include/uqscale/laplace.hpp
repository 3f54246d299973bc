#pragma once

// Linearized Laplace approximation with full generalized Gauss-Newton
// curvature: posterior construction, logit-space covariance, Monte Carlo
// GLM predictive, the Delta-method check and Hessian spectra.

#include <cmath>
#include <string>
#include <vector>

#include "uqscale/datasets.hpp"
#include "uqscale/linalg.hpp"
#include "uqscale/nnet.hpp"
#include "uqscale/parallel.hpp"
#include "uqscale/rng.hpp"
#include "uqscale/scaling_fit.hpp"
#include "uqscale/uq_metrics.hpp"

namespace uqscale {

/// Hessian of the softmax negative log-likelihood in the logits:
/// diag(pi) - pi pi^T.
inline SymMatrix lambda_softmax(const Vector& logits) {
  const Vector p = softmax(logits);
  Matrix m = -p * p.transpose();
  m.diagonal() += p;
  return SymMatrix::from_nearly_symmetric(std::move(m));
}

struct GGNPosterior {
  ParamVector theta_map;
  SymMatrix precision;  // sum_n J_n^T Lambda_n J_n + lambda I
  SymMatrix cov;
  double prior_precision = 1.0;

  Matrix data_precision() const {
    Matrix d = precision.matrix();
    d.diagonal().array() -= prior_precision;
    return d;
  }
};

inline constexpr Eigen::Index kDefaultParamCap = 500;

/// Per-point GGN terms are summed in index order within fixed-size chunks,
/// and chunks are combined in chunk order, so the result does not depend on
/// the number of worker threads.
inline Matrix ggn_data_term(const MLPSpec& spec, const ParamVector& theta, const LabeledDataset& data,
                            unsigned workers = default_workers()) {
  constexpr Eigen::Index kChunk = 64;
  const Eigen::Index p = spec.num_params();
  const Eigen::Index n = data.size();
  const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  std::vector<Matrix> partial(chunks);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        Matrix acc = Matrix::Zero(p, p);
        const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
        const Eigen::Index end = std::min(n, begin + kChunk);
        for (Eigen::Index i = begin; i < end; ++i) {
          const Vector x = data.inputs.row(i).transpose();
          const Matrix jac = mlp_jacobian(spec, theta, x);
          const SymMatrix lam = lambda_softmax(mlp_forward(spec, theta, x));
          acc.noalias() += jac.transpose() * (lam.matrix() * jac);
        }
        partial[c] = std::move(acc);
      },
      workers);
  Matrix total = Matrix::Zero(p, p);
  for (const auto& m : partial) total += m;
  return total;
}

inline GGNPosterior build_ggn_posterior(const MLPSpec& spec, const ParamVector& theta_map, const LabeledDataset& data,
                                        double prior_precision, Eigen::Index param_cap = kDefaultParamCap) {
  require(prior_precision > 0.0, ErrorCode::InvalidArgument, "prior precision must be > 0");
  require(spec.num_params() <= param_cap, ErrorCode::ParameterCapExceeded,
          "network has " + std::to_string(spec.num_params()) + " parameters, cap is " + std::to_string(param_cap));
  detail::check_theta(spec, theta_map);
  Matrix prec = ggn_data_term(spec, theta_map, data);
  prec.diagonal().array() += prior_precision;
  GGNPosterior post;
  post.theta_map = theta_map;
  post.prior_precision = prior_precision;
  post.precision = SymMatrix::from_nearly_symmetric(std::move(prec));
  try {
    post.cov = spd_inverse(post.precision);
  } catch (const Error& e) {
    fail(ErrorCode::NotPositiveDefinite, std::string("internal: GGN precision not SPD despite lambda > 0: ") + e.what());
  }
  return post;
}

struct LogitGaussian {
  Vector mean;
  SymMatrix cov;

  double eu_logit() const { return cov.trace(); }
  /// Variance of f1 - f0 for a two-logit head.
  double diff_variance() const {
    require(cov.dim() == 2, ErrorCode::WrongHeadSize, "logit difference needs C = 2");
    return cov(0, 0) + cov(1, 1) - 2.0 * cov(0, 1);
  }
};

/// Sigma_logit(x) = J_x Sigma J_x^T.
inline LogitGaussian logit_covariance(const GGNPosterior& post, const MLPSpec& spec, const Vector& x) {
  require(post.theta_map.size() == spec.num_params(), ErrorCode::DimensionMismatch, "posterior / spec mismatch");
  const Matrix jac = mlp_jacobian(spec, post.theta_map, x);
  return {mlp_forward(spec, post.theta_map, x),
          SymMatrix::from_nearly_symmetric(jac * post.cov.matrix() * jac.transpose())};
}

/// First-order (Delta-method) variance of sigmoid(f) for a binary head,
/// [pi (1 - pi)]^2 Var[f], with f the logit difference f1 - f0.
inline double delta_method_eu(const Vector& mean_logits, double logit_variance) {
  require(mean_logits.size() == 2, ErrorCode::WrongHeadSize, "Delta method needs a binary head");
  const double f = mean_logits(1) - mean_logits(0);
  const double pi = 1.0 / (1.0 + std::exp(-f));
  const double g = pi * (1.0 - pi);
  return g * g * logit_variance;
}

struct EUReport {
  double eu_logit = 0.0;       // trace of Sigma_logit
  double logit_diff_var = 0.0; // Var[f1 - f0] (binary heads)
  double eu_var = 0.0;         // unbiased MC variance of p(class 1)
  double eu_var_delta = 0.0;
  double eu_ent = 0.0;         // MC mutual information
  double eu_ent_second_order = 0.0;
  int mc_samples = 0;
};

struct GLMPredictive {
  PredictiveEnsemble ensemble;
  EUReport report;
};

/// Cholesky factor of the posterior covariance, reused across test points.
inline Matrix posterior_sampling_factor(const GGNPosterior& post) { return cholesky_lower(post.cov); }

/// Draws theta_s = theta_MAP + L z_s and pushes them through the linearized
/// network f_lin = f(x; theta_MAP) + J_x (theta_s - theta_MAP).
inline GLMPredictive glm_predictive_mc(const GGNPosterior& post, const MLPSpec& spec, const Vector& x, int samples,
                                       RngStream& stream, const Matrix* sampling_factor = nullptr) {
  require(samples >= 2, ErrorCode::InvalidSampleCount, "glm_predictive_mc needs S >= 2");
  const Matrix local_factor = sampling_factor ? Matrix() : posterior_sampling_factor(post);
  const Matrix& chol = sampling_factor ? *sampling_factor : local_factor;
  const Vector f0 = mlp_forward(spec, post.theta_map, x);
  const Matrix jac = mlp_jacobian(spec, post.theta_map, x);
  const Matrix projected = jac * chol.triangularView<Eigen::Lower>();  // C x P
  const Eigen::Index c_out = f0.size();
  const Eigen::Index p = chol.rows();

  GLMPredictive out;
  out.ensemble.source = EnsembleSource::laplace_mc;
  out.ensemble.members.resize(samples, c_out);
  Vector z(p);
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index k = 0; k < p; ++k) z(k) = stream.standard_normal();
    out.ensemble.members.row(s) = softmax(f0 + projected * z).transpose();
  }

  const SymMatrix logit_cov = SymMatrix::from_nearly_symmetric(jac * post.cov.matrix() * jac.transpose());
  EUReport& r = out.report;
  r.mc_samples = samples;
  r.eu_logit = logit_cov.trace();
  r.eu_ent = decompose_entropy(out.ensemble).eu;
  const MomentDecomposition moments = decompose_variance(out.ensemble);
  r.eu_ent_second_order = mutual_information_second_order(ensemble_mean(out.ensemble), moments.eu_cov);
  if (c_out == 2) {
    const auto col = out.ensemble.members.col(1);
    const double mean = col.mean();
    r.eu_var = (col.array() - mean).square().sum() / static_cast<double>(samples - 1);
    r.logit_diff_var = logit_cov(0, 0) + logit_cov(1, 1) - 2.0 * logit_cov(0, 1);
    r.eu_var_delta = delta_method_eu(f0, r.logit_diff_var);
  }
  return out;
}

struct HessianSpectrum {
  double max_eig = 0.0;
  double mean_eig = 0.0;
  std::vector<double> eigenvalues;
};

/// Spectrum of the data term (precision - lambda I). Tiny negative values
/// from rounding are clipped to zero.
inline HessianSpectrum hessian_spectrum(const GGNPosterior& post) {
  HessianSpectrum out;
  out.eigenvalues = sym_eigvals(SymMatrix::from_nearly_symmetric(post.data_precision()));
  double sum = 0.0;
  for (double& e : out.eigenvalues) {
    e = std::max(0.0, e);
    sum += e;
  }
  out.max_eig = out.eigenvalues.empty() ? 0.0 : out.eigenvalues.back();
  out.mean_eig = out.eigenvalues.empty() ? 0.0 : sum / static_cast<double>(out.eigenvalues.size());
  return out;
}

struct LLAConfig {
  std::vector<int> n_grid{5, 10, 20, 50, 100, 200, 500};
  std::vector<double> lambda_grid{0.001, 0.01, 0.1, 1.0};
  int folds = 3;
  std::vector<int> hidden{50};
  int test_size = 100;
  int mc_samples = 1000;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
  bool spectrum = false;  // also record max/mean eigenvalue of the data term
  bool eu_metrics = true;  // false skips the MC predictive entirely
  /// When > 0 the MAP is fitted with prior precision map_weight_decay * N,
  /// i.e. mean cross-entropy plus (map_weight_decay / 2) |theta|^2, and
  /// lambda enters only the Laplace posterior. When 0 the MAP uses lambda.
  double map_weight_decay = 0.03;
  TrainConfig train;
};

/// One (lambda, N, fold) cell's test-averaged metrics.
struct LLACell {
  double lambda = 0.0;
  int n = 0;
  int fold = 0;
  double eu_logit = 0.0;        // Var[f1 - f0] for binary heads, else trace
  double eu_logit_trace = 0.0;  // trace of Sigma_logit
  double eu_var = 0.0;
  double eu_ent = 0.0;
  double max_eig = 0.0;
  double mean_eig = 0.0;
  int train_epochs = 0;
};

/// Curves keyed by metric for one lambda.
struct LLACurves {
  double lambda = 0.0;
  ScalingCurve eu_logit{"eu_logit", "raw", {}};
  ScalingCurve eu_var{"eu_var", "probability^2", {}};
  ScalingCurve eu_ent{"eu_ent", "nats", {}};
  ScalingCurve max_eig{"max_eig", "raw", {}};
  ScalingCurve mean_eig{"mean_eig", "raw", {}};
};

struct LLAResult {
  std::vector<LLACell> cells;  // ordered by (lambda, n, fold)
  std::vector<LLACurves> curves;
};

/// Runs a single cell: train on the first N points of fold f's stream, build
/// the GGN posterior, and average the EU metrics over the fixed test set.
inline LLACell lla_cell(const LLAConfig& cfg, double lambda, int n, int fold, const LabeledDataset& test) {
  const MLPSpec spec = [&] {
    std::vector<int> sizes{2};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(2);
    return MLPSpec::tanh_mlp(sizes);
  }();
  RngStream data_stream(cfg.seed, streams::train(static_cast<std::uint64_t>(fold)));
  const LabeledDataset train = gen_two_moons(n, {cfg.noise_sd, 0.0, 0.0}, data_stream);
  RngStream init_stream(cfg.seed, streams::init(static_cast<std::uint64_t>(fold)));
  TrainConfig tc = cfg.train;
  tc.prior_precision = cfg.map_weight_decay > 0.0 ? cfg.map_weight_decay * n : lambda;
  const TrainResult trained = train_map(spec, train, tc, init_stream);
  const GGNPosterior post = build_ggn_posterior(spec, trained.theta, train, lambda);
  const Matrix factor = cfg.eu_metrics ? posterior_sampling_factor(post) : Matrix();

  LLACell cell;
  cell.lambda = lambda;
  cell.n = n;
  cell.fold = fold;
  cell.train_epochs = trained.epochs;
  const std::uint64_t cell_id = static_cast<std::uint64_t>(n);
  RngStream mc_stream(cfg.seed, streams::inference(static_cast<std::uint64_t>(fold), cell_id));
  for (Eigen::Index i = 0; cfg.eu_metrics && i < test.size(); ++i) {
    const Vector x = test.inputs.row(i).transpose();
    const GLMPredictive pred = glm_predictive_mc(post, spec, x, cfg.mc_samples, mc_stream, &factor);
    cell.eu_logit += spec.num_classes() == 2 ? pred.report.logit_diff_var : pred.report.eu_logit;
    cell.eu_logit_trace += pred.report.eu_logit;
    cell.eu_var += pred.report.eu_var;
    cell.eu_ent += pred.report.eu_ent;
  }
  const double m = static_cast<double>(test.size());
  cell.eu_logit /= m;
  cell.eu_logit_trace /= m;
  cell.eu_var /= m;
  cell.eu_ent /= m;
  if (cfg.spectrum) {
    const HessianSpectrum spec_out = hessian_spectrum(post);
    cell.max_eig = spec_out.max_eig;
    cell.mean_eig = spec_out.mean_eig;
  }
  return cell;
}

inline LabeledDataset lla_test_set(const LLAConfig& cfg) {
  RngStream test_stream(cfg.seed, streams::kTest);
  return gen_two_moons(cfg.test_size, {cfg.noise_sd, 0.0, 0.0}, test_stream);
}

/// Sweeps (lambda, N, fold); cells run in parallel and are gathered in order.
inline LLAResult lla_scaling_experiment(const LLAConfig& cfg) {
  require(cfg.folds >= 1 && !cfg.n_grid.empty() && !cfg.lambda_grid.empty(), ErrorCode::InvalidArgument,
          "empty LLA grid");
  const LabeledDataset test = lla_test_set(cfg);
  LLAResult out;
  for (double lambda : cfg.lambda_grid)
    for (int n : cfg.n_grid)
      for (int f = 0; f < cfg.folds; ++f) out.cells.push_back({lambda, n, f});
  parallel_for(out.cells.size(), [&](std::size_t i) {
    const LLACell key = out.cells[i];
    out.cells[i] = lla_cell(cfg, key.lambda, key.n, key.fold, test);
  });
  for (double lambda : cfg.lambda_grid) {
    LLACurves c;
    c.lambda = lambda;
    for (const auto& cell : out.cells) {
      if (cell.lambda != lambda) continue;
      c.eu_logit.add(cell.n, cell.eu_logit, cell.fold);
      c.eu_var.add(cell.n, cell.eu_var, cell.fold);
      c.eu_ent.add(cell.n, cell.eu_ent, cell.fold);
      if (cfg.spectrum) {
        c.max_eig.add(cell.n, cell.max_eig, cell.fold);
        c.mean_eig.add(cell.n, cell.mean_eig, cell.fold);
      }
    }
    out.curves.push_back(std::move(c));
  }
  return out;
}

}  // namespace uqscale
