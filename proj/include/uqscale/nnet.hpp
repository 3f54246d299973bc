#pragma once

// Feed-forward tanh networks over a flat parameter vector: forward passes,
// dropout, exact reverse-mode gradients, per-output Jacobians and MAP
// training with Adam.
//
// Parameter layout, layer by layer: the weight matrix (fan_out x fan_in,
// row-major) followed by the bias (fan_out).

#include <cmath>
#include <optional>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "uqscale/datasets.hpp"
#include "uqscale/linalg.hpp"
#include "uqscale/rng.hpp"

namespace uqscale {

using ParamVector = Vector;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MLPSpec {
  std::vector<int> layer_sizes;     // input D, hidden..., output C
  std::vector<bool> dropout_sites;  // one flag per hidden layer

  /// tanh MLP with dropout sites after every hidden activation.
  static MLPSpec tanh_mlp(std::vector<int> sizes) {
    MLPSpec s;
    s.layer_sizes = std::move(sizes);
    s.dropout_sites.assign(s.layer_sizes.size() >= 2 ? s.layer_sizes.size() - 2 : 0, true);
    s.validate();
    return s;
  }

  void validate() const {
    require(layer_sizes.size() >= 2, ErrorCode::InvalidArgument, "MLPSpec needs >= 2 layers");
    for (int n : layer_sizes) require(n >= 1, ErrorCode::InvalidArgument, "layer sizes must be positive");
    require(layer_sizes.back() >= 2, ErrorCode::InvalidArgument, "output size must be >= 2");
    require(dropout_sites.size() == layer_sizes.size() - 2, ErrorCode::InvalidArgument,
            "one dropout flag per hidden layer");
  }

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  std::size_t num_weight_layers() const { return layer_sizes.size() - 1; }

  Eigen::Index num_params() const {
    Eigen::Index p = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) p += (layer_sizes[l] + 1) * layer_sizes[l + 1];
    return p;
  }

  /// Offset of layer l's weight block in the flat vector.
  Eigen::Index offset(std::size_t l) const {
    Eigen::Index p = 0;
    for (std::size_t k = 0; k < l; ++k) p += (layer_sizes[k] + 1) * layer_sizes[k + 1];
    return p;
  }
};

namespace detail {

inline void check_theta(const MLPSpec& spec, const ParamVector& theta) {
  require(theta.size() == spec.num_params(), ErrorCode::DimensionMismatch, "parameter vector length");
}

inline Eigen::Map<const RowMajorMatrix> weights(const MLPSpec& spec, const ParamVector& theta, std::size_t l) {
  return {theta.data() + spec.offset(l), spec.layer_sizes[l + 1], spec.layer_sizes[l]};
}

inline Eigen::Map<const Vector> bias(const MLPSpec& spec, const ParamVector& theta, std::size_t l) {
  return {theta.data() + spec.offset(l) + spec.layer_sizes[l + 1] * spec.layer_sizes[l], spec.layer_sizes[l + 1]};
}

/// tanh through the vectorized exponential, 1 - 2 / (exp(2z) + 1); accurate
/// to a few ulps in absolute terms and much faster than std::tanh on arrays.
template <typename Derived>
Matrix tanh_act(const Eigen::MatrixBase<Derived>& z) {
  return (1.0 - 2.0 / ((2.0 * z.derived().array()).exp() + 1.0)).matrix();
}

/// Column-wise stable log-sum-exp.
inline Eigen::RowVectorXd log_sum_exp_cols(const Matrix& logits) {
  const Eigen::RowVectorXd m = logits.colwise().maxCoeff();
  return m.array() + (logits.rowwise() - m).array().exp().colwise().sum().log();
}

}  // namespace detail

/// Softmax with max subtraction.
inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

/// Logits for a batch of inputs (rows of X); returns C x N.
inline Matrix mlp_forward_batch(const MLPSpec& spec, const ParamVector& theta, const Matrix& inputs) {
  detail::check_theta(spec, theta);
  require(inputs.cols() == spec.input_dim(), ErrorCode::DimensionMismatch, "input dimension");
  Matrix a = inputs.transpose();
  const std::size_t layers = spec.num_weight_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = detail::weights(spec, theta, l) * a;
    z.colwise() += detail::bias(spec, theta, l);
    if (l + 1 < layers) a = detail::tanh_act(z);
    else a = std::move(z);
  }
  return a;
}

inline Vector mlp_forward(const MLPSpec& spec, const ParamVector& theta, const Vector& x) {
  require(x.size() == spec.input_dim(), ErrorCode::DimensionMismatch, "input dimension");
  return mlp_forward_batch(spec, theta, x.transpose()).col(0);
}

/// Hidden activations and logits for one input under inverted dropout: each
/// unit at a dropout site is zeroed with probability `rate` and survivors are
/// scaled by 1 / (1 - rate). Masks are drawn unit by unit, layer by layer.
struct DropoutPass {
  std::vector<Vector> hidden;
  Vector logits;
};

inline DropoutPass mlp_dropout_pass(const MLPSpec& spec, const ParamVector& theta, const Vector& x, double rate,
                                    RngStream& stream) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidRate, "dropout rate must be in [0, 1)");
  detail::check_theta(spec, theta);
  require(x.size() == spec.input_dim(), ErrorCode::DimensionMismatch, "input dimension");
  DropoutPass out;
  Vector a = x;
  const std::size_t layers = spec.num_weight_layers();
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t l = 0; l < layers; ++l) {
    Vector z = detail::weights(spec, theta, l) * a + detail::bias(spec, theta, l);
    if (l + 1 == layers) {
      out.logits = std::move(z);
      break;
    }
    a = detail::tanh_act(z);
    if (rate > 0.0 && spec.dropout_sites[l]) {
      for (Eigen::Index u = 0; u < a.size(); ++u) a(u) = stream.uniform01() < rate ? 0.0 : a(u) * keep_scale;
    }
    out.hidden.push_back(a);
  }
  return out;
}

inline Vector mlp_forward_dropout(const MLPSpec& spec, const ParamVector& theta, const Vector& x, double rate,
                                  RngStream& stream) {
  if (rate == 0.0) return mlp_forward(spec, theta, x);
  return mlp_dropout_pass(spec, theta, x, rate, stream).logits;
}

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Summed cross-entropy plus (lambda / 2) ||theta||^2 and its exact gradient.
/// With `dropout_rate > 0` a fresh per-point mask is drawn from `stream` at
/// every dropout site (training-time dropout).
inline LossGrad mlp_loss_grad(const MLPSpec& spec, const ParamVector& theta, const LabeledDataset& data,
                              double prior_precision, double dropout_rate = 0.0, RngStream* stream = nullptr) {
  detail::check_theta(spec, theta);
  LossGrad out;
  out.loss = 0.5 * prior_precision * theta.squaredNorm();
  out.grad = prior_precision * theta;
  const Eigen::Index n = data.size();
  if (n == 0) return out;
  require(data.is_classification(), ErrorCode::InvalidArgument, "mlp_loss_grad needs class labels");
  require(data.dim() == spec.input_dim(), ErrorCode::DimensionMismatch, "input dimension");
  require(dropout_rate == 0.0 || stream != nullptr, ErrorCode::InvalidArgument, "dropout needs a stream");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::InvalidRate, "dropout rate must be in [0, 1)");

  const std::size_t layers = spec.num_weight_layers();
  std::vector<Matrix> acts;  // acts[l] = input to layer l
  std::vector<Matrix> masks(layers);
  acts.reserve(layers);
  acts.push_back(data.inputs.transpose());
  Matrix logits;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = detail::weights(spec, theta, l) * acts.back();
    z.colwise() += detail::bias(spec, theta, l);
    if (l + 1 == layers) {
      logits = std::move(z);
      break;
    }
    Matrix a = detail::tanh_act(z);
    if (dropout_rate > 0.0 && spec.dropout_sites[l]) {
      Matrix mask(a.rows(), a.cols());
      const double keep_scale = 1.0 / (1.0 - dropout_rate);
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index u = 0; u < a.rows(); ++u) mask(u, j) = stream->uniform01() < dropout_rate ? 0.0 : keep_scale;
      a = a.cwiseProduct(mask);
      masks[l] = std::move(mask);
    }
    acts.push_back(std::move(a));
  }

  const Eigen::RowVectorXd lse = detail::log_sum_exp_cols(logits);
  Matrix delta = (logits.rowwise() - lse).array().exp().matrix();  // softmax, C x N
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = data.labels[static_cast<std::size_t>(j)];
    require(y >= 0 && y < spec.num_classes(), ErrorCode::DimensionMismatch, "label out of range");
    out.loss += lse(j) - logits(y, j);
    delta(y, j) -= 1.0;
  }

  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::Index off = spec.offset(l);
    const Eigen::Index fan_out = spec.layer_sizes[l + 1];
    const Eigen::Index fan_in = spec.layer_sizes[l];
    Eigen::Map<RowMajorMatrix> gw(out.grad.data() + off, fan_out, fan_in);
    gw.noalias() += delta * acts[l].transpose();
    out.grad.segment(off + fan_out * fan_in, fan_out) += delta.rowwise().sum();
    if (l == 0) break;
    Matrix da = detail::weights(spec, theta, l).transpose() * delta;
    const Matrix& a = acts[l];
    if (masks[l - 1].size() > 0) {
      // a = tanh(z) * mask, so da/dz = mask * (1 - tanh^2).
      const double keep_scale = 1.0 / (1.0 - dropout_rate);
      const Matrix t = a / keep_scale;
      delta = da.cwiseProduct(masks[l - 1]).cwiseProduct((1.0 - t.array().square()).matrix());
    } else {
      delta = da.cwiseProduct((1.0 - a.array().square()).matrix());
    }
  }
  return out;
}

/// C x P Jacobian of the logits with respect to the parameters.
inline Matrix mlp_jacobian(const MLPSpec& spec, const ParamVector& theta, const Vector& x) {
  detail::check_theta(spec, theta);
  require(x.size() == spec.input_dim(), ErrorCode::DimensionMismatch, "input dimension");
  const std::size_t layers = spec.num_weight_layers();
  std::vector<Vector> acts;
  acts.reserve(layers);
  acts.push_back(x);
  for (std::size_t l = 0; l + 1 < layers; ++l)
    acts.push_back(detail::tanh_act(detail::weights(spec, theta, l) * acts.back() + detail::bias(spec, theta, l)));

  const Eigen::Index c_out = spec.num_classes();
  Matrix jac = Matrix::Zero(c_out, spec.num_params());
  // Backpropagate all C unit vectors at once: delta is fan_out x C.
  Matrix delta = Matrix::Identity(c_out, c_out);
  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::Index off = spec.offset(l);
    const Eigen::Index fan_out = spec.layer_sizes[l + 1];
    const Eigen::Index fan_in = spec.layer_sizes[l];
    for (Eigen::Index c = 0; c < c_out; ++c) {
      for (Eigen::Index o = 0; o < fan_out; ++o) {
        const double d = delta(o, c);
        for (Eigen::Index i = 0; i < fan_in; ++i) jac(c, off + o * fan_in + i) = d * acts[l](i);
        jac(c, off + fan_out * fan_in + o) = d;
      }
    }
    if (l == 0) break;
    const Matrix da = detail::weights(spec, theta, l).transpose() * delta;
    delta = (1.0 - acts[l].array().square()).matrix().asDiagonal() * da;
  }
  return jac;
}

/// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const MLPSpec& spec, RngStream& stream) {
  spec.validate();
  ParamVector theta = ParamVector::Zero(spec.num_params());
  for (std::size_t l = 0; l < spec.num_weight_layers(); ++l) {
    const double fan_in = spec.layer_sizes[l];
    const double fan_out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    const Eigen::Index off = spec.offset(l);
    const Eigen::Index count = spec.layer_sizes[l] * spec.layer_sizes[l + 1];
    for (Eigen::Index k = 0; k < count; ++k) theta(off + k) = stream.uniform(-limit, limit);
  }
  return theta;
}

struct TrainConfig {
  double prior_precision = 1.0;
  double step_size = 1e-2;
  int max_epochs = 5000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double convergence_tol = 1e-5;
  double dropout_rate = 0.0;

  void validate() const {
    require(prior_precision > 0.0 && step_size > 0.0 && max_epochs > 0 && convergence_tol > 0.0,
            ErrorCode::InvalidArgument, "train config values must be positive");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorCode::InvalidArgument,
            "moment decays must lie in (0, 1)");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::InvalidRate, "dropout rate must be in [0, 1)");
  }
};

struct TrainResult {
  ParamVector theta;
  int epochs = 0;
  bool converged = false;
  double grad_inf = 0.0;
  std::vector<double> loss_history;
};

/// Full-batch Adam on the regularized cross-entropy. Starts from
/// `init_params(spec, stream)` unless `start` is given.
///
/// Without dropout the loss is deterministic, so a step that raises it is
/// undone (parameters and moments restored) and retried at half the step
/// size, which then recovers geometrically on accepted steps. This removes the limit-cycle jitter Adam shows near a minimum and
/// keeps the loss history nonincreasing. Rejected steps still count as epochs.
inline TrainResult train_map(const MLPSpec& spec, const LabeledDataset& data, const TrainConfig& config,
                             RngStream& stream, const ParamVector* start = nullptr) {
  config.validate();
  TrainResult out;
  out.theta = start ? *start : init_params(spec, stream);
  detail::check_theta(spec, out.theta);
  RngStream dropout_stream = stream.split(stream.stream_id() ^ 0xD50Full);
  const bool monotone = config.dropout_rate == 0.0;
  Vector m = Vector::Zero(out.theta.size());
  Vector v = Vector::Zero(out.theta.size());
  double b1t = 1.0;
  double b2t = 1.0;
  double scale = 1.0;
  struct Saved {
    ParamVector theta;
    Vector m, v;
    double b1t, b2t;
    LossGrad lg;
  };
  std::optional<Saved> saved;
  out.loss_history.reserve(static_cast<std::size_t>(config.max_epochs));
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    LossGrad lg = mlp_loss_grad(spec, out.theta, data, config.prior_precision, config.dropout_rate,
                                config.dropout_rate > 0.0 ? &dropout_stream : nullptr);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) fail(ErrorCode::DivergedLoss, "loss became non-finite");
    if (monotone && saved && lg.loss > saved->lg.loss) {
      out.theta = std::move(saved->theta);
      m = std::move(saved->m);
      v = std::move(saved->v);
      b1t = saved->b1t;
      b2t = saved->b2t;
      lg = std::move(saved->lg);
      scale *= 0.5;
    } else if (saved) {
      scale = 1.0;
    }
    out.loss_history.push_back(lg.loss);
    out.grad_inf = lg.grad.cwiseAbs().maxCoeff();
    out.epochs = epoch;
    if (monotone && out.grad_inf <= config.convergence_tol) {
      out.converged = true;
      return out;
    }
    if (monotone) saved = Saved{out.theta, m, v, b1t, b2t, lg};
    b1t *= config.beta1;
    b2t *= config.beta2;
    m = config.beta1 * m + (1.0 - config.beta1) * lg.grad;
    v = config.beta2 * v + (1.0 - config.beta2) * lg.grad.cwiseAbs2();
    const double lr = scale * config.step_size * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    out.theta.array() -= lr * m.array() / (v.array().sqrt() + 1e-8);
  }
  out.epochs = config.max_epochs;
  const LossGrad last = mlp_loss_grad(spec, out.theta, data, config.prior_precision);
  if (monotone && saved && last.loss > saved->lg.loss) {
    out.theta = std::move(saved->theta);
    out.grad_inf = saved->lg.grad.cwiseAbs().maxCoeff();
  } else {
    out.grad_inf = last.grad.cwiseAbs().maxCoeff();
  }
  out.converged = monotone && out.grad_inf <= config.convergence_tol;
  return out;
}

// Flat binary records: an 8-byte little-endian length followed by that many
// little-endian IEEE-754 doubles.

namespace detail {
inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}
inline bool get_u64_le(std::istream& is, std::uint64_t& v) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}
}  // namespace detail

inline void write_param_records(const std::string& path, const std::vector<ParamVector>& records) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot open " + path);
  for (const auto& r : records) {
    detail::put_u64_le(os, static_cast<std::uint64_t>(r.size()));
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      std::uint64_t bits;
      const double v = r(i);
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_u64_le(os, bits);
    }
  }
  require(static_cast<bool>(os), ErrorCode::IoError, "write failed for " + path);
}

inline std::vector<ParamVector> read_param_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path);
  std::vector<ParamVector> out;
  std::uint64_t len = 0;
  while (detail::get_u64_le(is, len)) {
    require(len < (std::uint64_t{1} << 32), ErrorCode::IoError, "implausible record length in " + path);
    ParamVector r(static_cast<Eigen::Index>(len));
    for (std::uint64_t i = 0; i < len; ++i) {
      std::uint64_t bits = 0;
      require(detail::get_u64_le(is, bits), ErrorCode::IoError, "truncated record in " + path);
      double v;
      std::memcpy(&v, &bits, sizeof v);
      r(static_cast<Eigen::Index>(i)) = v;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_param_vector(const std::string& path, const ParamVector& theta) {
  write_param_records(path, {theta});
}

inline ParamVector read_param_vector(const std::string& path) {
  auto records = read_param_records(path);
  require(records.size() == 1, ErrorCode::IoError, "expected exactly one record in " + path);
  return std::move(records.front());
}

}  // namespace uqscale
