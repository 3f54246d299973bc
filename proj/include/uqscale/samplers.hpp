#pragma once

// Posterior sampling and ensemble inference over MLP weights: HMC, MC
// dropout and deep ensembles. All three produce PredictiveEnsembles that
// feed the same uncertainty decomposition.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "uqscale/datasets.hpp"
#include "uqscale/nnet.hpp"
#include "uqscale/parallel.hpp"
#include "uqscale/rng.hpp"
#include "uqscale/uq_metrics.hpp"

namespace uqscale {

struct HMCConfig {
  double step_size = 0.01;
  int leapfrog_steps = 20;
  int warmup = 1000;
  int samples = 200;
  double prior_sd = 1.0;
  /// Dual-averaging step-size adaptation during warmup (off by default).
  bool adapt_step_size = false;
  double target_accept = 0.8;

  void validate() const {
    require(step_size > 0.0 && leapfrog_steps > 0 && warmup >= 0 && samples > 0 && prior_sd > 0.0,
            ErrorCode::InvalidArgument, "HMC config values must be positive");
    require(target_accept > 0.0 && target_accept < 1.0, ErrorCode::InvalidArgument, "target_accept in (0, 1)");
  }
};

struct PosteriorSamples {
  Matrix draws;             // K x P
  double accept_rate = 0.0; // over the kept (post-warmup) iterations
  double final_step_size = 0.0;
  HMCConfig config;
};

/// Log density and its gradient evaluated together.
struct DensityEval {
  double log_density = 0.0;
  Vector grad;
};
using LogDensityFn = std::function<DensityEval(const Vector&)>;

/// Leapfrog HMC with identity mass matrix and Metropolis correction. Warmup
/// draws are discarded.
inline PosteriorSamples hmc_sample(const LogDensityFn& target, const Vector& initial, const HMCConfig& config,
                                   RngStream& stream) {
  config.validate();
  const Eigen::Index p = initial.size();
  require(p >= 1 && p <= 5000, ErrorCode::InvalidArgument, "HMC dimension must be in [1, 5000]");

  Vector q = initial;
  DensityEval current = target(q);
  require(std::isfinite(current.log_density) && current.grad.allFinite(), ErrorCode::NonFiniteGradient,
          "initial point has a non-finite density or gradient");

  PosteriorSamples out;
  out.config = config;
  out.draws.resize(config.samples, p);
  double step = config.step_size;

  // Dual averaging (Hoffman & Gelman) state.
  const double mu = std::log(10.0 * config.step_size);
  double h_bar = 0.0;
  double log_step_bar = std::log(step);
  constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;

  int accepted = 0;
  Vector mom(p);
  const int total = config.warmup + config.samples;
  for (int it = 0; it < total; ++it) {
    for (Eigen::Index k = 0; k < p; ++k) mom(k) = stream.standard_normal();
    const double h0 = -current.log_density + 0.5 * mom.squaredNorm();

    Vector q_new = q;
    Vector m_new = mom + 0.5 * step * current.grad;
    DensityEval prop;
    bool finite = true;
    for (int l = 0; l < config.leapfrog_steps; ++l) {
      q_new += step * m_new;
      prop = target(q_new);
      if (!std::isfinite(prop.log_density) || !prop.grad.allFinite()) {
        finite = false;
        break;
      }
      m_new += (l + 1 == config.leapfrog_steps ? 0.5 : 1.0) * step * prop.grad;
    }

    double accept_prob = 0.0;
    if (finite) {
      const double h1 = -prop.log_density + 0.5 * m_new.squaredNorm();
      accept_prob = std::isfinite(h1) ? std::min(1.0, std::exp(h0 - h1)) : 0.0;
    }
    const double u = stream.uniform01();
    const bool accept = finite && u < accept_prob;
    if (accept) {
      q = std::move(q_new);
      current = std::move(prop);
    }

    if (it < config.warmup) {
      if (config.adapt_step_size) {
        const double t = it + 1;
        h_bar = (1.0 - 1.0 / (t + kT0)) * h_bar + (config.target_accept - accept_prob) / (t + kT0);
        const double log_step = mu - std::sqrt(t) / kGamma * h_bar;
        const double w = std::pow(t, -kKappa);
        log_step_bar = w * log_step + (1.0 - w) * log_step_bar;
        step = std::exp(log_step);
        if (it + 1 == config.warmup) step = std::exp(log_step_bar);
      }
    } else {
      if (accept) ++accepted;
      out.draws.row(it - config.warmup) = q.transpose();
    }
  }
  out.final_step_size = step;
  out.accept_rate = static_cast<double>(accepted) / config.samples;
  if (out.accept_rate < 0.01) fail(ErrorCode::ZeroAcceptance, "HMC acceptance below 1% after warmup");
  return out;
}

/// Log posterior of a BNN classifier with an isotropic N(0, prior_sd^2) prior.
inline LogDensityFn bnn_log_posterior(const MLPSpec& spec, const LabeledDataset& data, double prior_sd) {
  const double precision = 1.0 / (prior_sd * prior_sd);
  return [spec, &data, precision](const Vector& theta) {
    LossGrad lg = mlp_loss_grad(spec, theta, data, precision);
    return DensityEval{-lg.loss, -lg.grad};
  };
}

/// One softmax member per posterior draw.
inline PredictiveEnsemble bnn_posterior_predict(const PosteriorSamples& samples, const MLPSpec& spec, const Vector& x) {
  require(samples.draws.cols() == spec.num_params(), ErrorCode::DimensionMismatch, "draws do not match the spec");
  PredictiveEnsemble e;
  e.source = EnsembleSource::hmc;
  e.members.resize(samples.draws.rows(), spec.num_classes());
  for (Eigen::Index k = 0; k < samples.draws.rows(); ++k)
    e.members.row(k) = softmax(mlp_forward(spec, samples.draws.row(k).transpose(), x)).transpose();
  return e;
}

/// Member probabilities for many inputs at once: result[k] is N x C for draw k.
inline std::vector<Matrix> batch_member_probs(const Matrix& draws, const MLPSpec& spec, const Matrix& inputs) {
  std::vector<Matrix> out(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index k = 0; k < draws.rows(); ++k) {
    const Matrix logits = mlp_forward_batch(spec, draws.row(k).transpose(), inputs);
    const Eigen::RowVectorXd lse = detail::log_sum_exp_cols(logits);
    out[static_cast<std::size_t>(k)] = (logits.rowwise() - lse).array().exp().matrix().transpose();
  }
  return out;
}

/// Test-averaged decomposition for an ensemble given as member parameter vectors.
inline UncertaintyTriple average_decomposition(const Matrix& draws, const MLPSpec& spec, const Matrix& inputs,
                                               EnsembleSource source) {
  const auto probs = batch_member_probs(draws, spec, inputs);
  std::vector<UncertaintyTriple> per_point(static_cast<std::size_t>(inputs.rows()));
  PredictiveEnsemble e;
  e.source = source;
  e.members.resize(draws.rows(), spec.num_classes());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index k = 0; k < draws.rows(); ++k) e.members.row(k) = probs[static_cast<std::size_t>(k)].row(i);
    per_point[static_cast<std::size_t>(i)] = decompose_entropy(e);
  }
  return average_metrics(per_point);
}

/// K stochastic forward passes with independent dropout masks.
inline PredictiveEnsemble mcd_predict(const MLPSpec& spec, const ParamVector& theta, const Vector& x, double rate,
                                      int passes, RngStream& stream) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidRate, "dropout rate must be in [0, 1)");
  require(passes >= 1, ErrorCode::InvalidCount, "need at least one pass");
  PredictiveEnsemble e;
  e.source = EnsembleSource::mcd;
  e.members.resize(passes, spec.num_classes());
  for (int k = 0; k < passes; ++k)
    e.members.row(k) = softmax(mlp_forward_dropout(spec, theta, x, rate, stream)).transpose();
  return e;
}

/// M independent MAP fits differing only in their initialization stream.
inline std::vector<ParamVector> deep_ensemble_train(const MLPSpec& spec, const LabeledDataset& data,
                                                    const TrainConfig& config, const std::vector<RngStream>& seeds) {
  require(!seeds.empty(), ErrorCode::InvalidCount, "deep ensemble needs M >= 1");
  std::vector<ParamVector> members(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t m) {
    RngStream s = seeds[m];
    members[m] = train_map(spec, data, config, s).theta;
  });
  return members;
}

inline PredictiveEnsemble deep_ensemble_predict(const std::vector<ParamVector>& members, const MLPSpec& spec,
                                                const Vector& x) {
  require(!members.empty(), ErrorCode::EmptyEnsemble, "no ensemble members");
  PredictiveEnsemble e;
  e.source = EnsembleSource::deep_ensemble;
  e.members.resize(static_cast<Eigen::Index>(members.size()), spec.num_classes());
  for (std::size_t m = 0; m < members.size(); ++m)
    e.members.row(static_cast<Eigen::Index>(m)) = softmax(mlp_forward(spec, members[m], x)).transpose();
  return e;
}

inline Matrix stack_members(const std::vector<ParamVector>& members) {
  Matrix m(static_cast<Eigen::Index>(members.size()), members.empty() ? 0 : members.front().size());
  for (std::size_t k = 0; k < members.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = members[k].transpose();
  return m;
}

}  // namespace uqscale
