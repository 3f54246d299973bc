#pragma once

// Desk-scale data generators: two moons and linear-Gaussian regression.
//
// Each point consumes a fixed number of draws from its stream, so the
// size-N1 dataset for a given stream is a prefix of the size-N2 dataset.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "uqscale/linalg.hpp"
#include "uqscale/rng.hpp"

namespace uqscale {

struct DatasetMeta {
  std::string generator;
  std::string params;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

/// Inputs are N x D. Classification sets fill `labels` and set
/// `num_classes`; regression sets fill `targets` and leave num_classes == 0.
struct LabeledDataset {
  Matrix inputs;
  std::vector<int> labels;
  Vector targets;
  int num_classes = 0;
  DatasetMeta meta;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  bool is_classification() const { return num_classes > 0; }

  /// First n points; the nested-subset contract makes this equal to
  /// regenerating with n.
  LabeledDataset prefix(Eigen::Index n) const {
    require(n >= 0 && n <= size(), ErrorCode::InvalidCount, "prefix length out of range");
    LabeledDataset out;
    out.inputs = inputs.topRows(n);
    if (is_classification()) out.labels.assign(labels.begin(), labels.begin() + n);
    else out.targets = targets.head(n);
    out.num_classes = num_classes;
    out.meta = meta;
    return out;
  }
};

/// Stream ids. Training data for fold f uses train_stream(f); the test set
/// uses a stream id outside that range.
namespace streams {
inline constexpr std::uint64_t kTest = 0xFFFF'0000'0000'0001ull;
inline constexpr std::uint64_t train(std::uint64_t fold) { return fold; }
inline constexpr std::uint64_t init(std::uint64_t fold) { return 0x1000'0000'0000ull + fold; }
inline constexpr std::uint64_t inference(std::uint64_t fold, std::uint64_t cell) {
  return 0x2000'0000'0000ull + (fold << 24) + cell;
}
}  // namespace streams

struct TwoMoonsParams {
  double noise_sd = 0.1;
  double shift_x = 0.0;
  double shift_y = 0.0;
};

/// Class 0: (cos t, sin t); class 1: (1 - cos t, 0.5 - sin t); t ~ U[0, pi],
/// plus isotropic Gaussian noise, then translated by the shift. Labels
/// alternate 0, 1, 0, ... so class counts differ by at most one.
inline LabeledDataset gen_two_moons(Eigen::Index n, const TwoMoonsParams& params, RngStream& stream) {
  require(n >= 2, ErrorCode::InvalidCount, "gen_two_moons needs n >= 2");
  require(params.noise_sd >= 0.0, ErrorCode::InvalidArgument, "noise_sd must be >= 0");
  LabeledDataset ds;
  ds.meta = {"two_moons", "", stream.seed(), stream.stream_id()};
  {
    std::ostringstream os;
    os << std::setprecision(17) << "noise_sd=" << params.noise_sd << ";shift=" << params.shift_x << ','
       << params.shift_y;
    ds.meta.params = os.str();
  }
  ds.num_classes = 2;
  ds.inputs.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = std::numbers::pi * stream.uniform01();
    const double ex = stream.standard_normal();
    const double ey = stream.standard_normal();
    double x = std::cos(t);
    double y = std::sin(t);
    if (label == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    ds.inputs(i, 0) = x + params.noise_sd * ex + params.shift_x;
    ds.inputs(i, 1) = y + params.noise_sd * ey + params.shift_y;
    ds.labels[static_cast<std::size_t>(i)] = label;
  }
  return ds;
}

/// y = theta_true . x + noise_sd * eps with x ~ N(0, input_cov).
inline LabeledDataset gen_linear_gaussian(Eigen::Index n, const Vector& theta_true, double noise_sd,
                                          const SymMatrix& input_cov, RngStream& stream) {
  require(theta_true.size() == input_cov.dim(), ErrorCode::DimensionMismatch,
          "theta_true and input_cov dimensions differ");
  require(n >= 0, ErrorCode::InvalidCount, "negative count");
  require(noise_sd >= 0.0, ErrorCode::InvalidArgument, "noise_sd must be >= 0");
  const Eigen::Index d = theta_true.size();
  const Matrix chol = cholesky_lower(input_cov);
  LabeledDataset ds;
  ds.meta = {"linear_gaussian", "", stream.seed(), stream.stream_id()};
  {
    std::ostringstream os;
    os << std::setprecision(17) << "d=" << d << ";noise_sd=" << noise_sd;
    ds.meta.params = os.str();
  }
  ds.inputs.resize(n, d);
  ds.targets.resize(n);
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = stream.standard_normal();
    const Vector x = chol * z;
    const double eps = stream.standard_normal();
    ds.inputs.row(i) = x.transpose();
    ds.targets(i) = theta_true.dot(x) + noise_sd * eps;
  }
  return ds;
}

/// CSV with header `x0,x1,...,label`, LF endings, 17 significant digits.
inline void write_csv(std::ostream& os, const LabeledDataset& ds) {
  for (Eigen::Index j = 0; j < ds.dim(); ++j) os << 'x' << j << ',';
  os << "label\n";
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) os << ds.inputs(i, j) << ',';
    if (ds.is_classification()) os << ds.labels[static_cast<std::size_t>(i)];
    else os << ds.targets(i);
    os << '\n';
  }
}

inline void write_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot open " + path);
  write_csv(os, ds);
  require(static_cast<bool>(os), ErrorCode::IoError, "write failed for " + path);
}

}  // namespace uqscale
