#pragma once

// Configuration-driven experiment runner: sweeps over (N, fold, lambda)
// cells, writes curves.csv / fits.json / report.svg, and re-derives fits
// from an existing curves.csv.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "uqscale/blr.hpp"
#include "uqscale/datasets.hpp"
#include "uqscale/laplace.hpp"
#include "uqscale/nnet.hpp"
#include "uqscale/parallel.hpp"
#include "uqscale/samplers.hpp"
#include "uqscale/scaling_fit.hpp"
#include "uqscale/svg.hpp"
#include "uqscale/uq_metrics.hpp"

#ifndef UQSCALE_VERSION
#define UQSCALE_VERSION "dev"
#endif

namespace uqscale {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"blr_scaling",  "lla_sweep",  "hmc_twomoons",
                                              "mcd_twomoons", "de_twomoons", "spectrum"};
  return names;
}

/// 12 log-spaced sizes from 100 to 1e6 (rounded).
inline std::vector<int> log_spaced_grid(double lo, double hi, int count) {
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    const int n = static_cast<int>(std::lround(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))));
    if (out.empty() || n > out.back()) out.push_back(n);
  }
  return out;
}

/// Full default tree for an experiment; user configs may only set keys that
/// exist here.
inline json default_config(const std::string& experiment) {
  json j;
  j["experiment"] = experiment;
  j["seed"] = 0;
  j["folds"] = 3;
  j["output_dir"] = "out";
  j["n_min"] = 0.0;
  j["full_grid"] = false;
  j["threads"] = 0;
  j["dataset"] = {{"noise_sd", 0.1}, {"shift", {0.0, 0.0}}, {"test_size", 100}};
  j["train"] = {{"step_size", 1e-2},    {"max_epochs", 5000},   {"beta1", 0.9},
                {"beta2", 0.999},       {"convergence_tol", 1e-5}, {"prior_precision", 1.0}};
  j["model"] = {{"hidden", {50}}};

  if (experiment == "blr_scaling") {
    j["folds"] = 4;
    j["n_grid"] = {100, 1000, 10000};
    j["blr"] = {{"dim", 5}, {"noise_sd", 0.5}, {"prior_var", 1.0}};
  } else if (experiment == "lla_sweep" || experiment == "spectrum") {
    j["n_grid"] = {5, 10, 20, 50, 100, 200, 500};
    j["lla"] = {{"lambda_grid", experiment == "spectrum" ? json::array({1.0}) : json::array({0.001, 0.01, 0.1, 1.0})},
                {"mc_samples", 1000},
                {"map_weight_decay", 0.03}};
  } else if (experiment == "hmc_twomoons") {
    j["folds"] = 2;
    j["n_grid"] = log_spaced_grid(100, 10000, 8);
    j["dataset"]["test_size"] = 5000;
    // Overlapping moons, so TU settles on a visible aleatoric floor inside the grid.
    j["dataset"]["noise_sd"] = 0.3;
    j["model"]["hidden"] = {32, 32};
    j["train"]["max_epochs"] = 1000;
    j["hmc"] = {{"step_size", 0.01}, {"leapfrog_steps", 20}, {"warmup", 1000}, {"samples", 200},
                {"prior_sd", 1.0},   {"adapt_step_size", true}, {"target_accept", 0.8}};
  } else if (experiment == "mcd_twomoons") {
    j["n_grid"] = {50, 100, 200, 400, 800};
    j["dataset"]["test_size"] = 1000;
    j["mcd"] = {{"rate", 0.5}, {"passes", 100}};
  } else if (experiment == "de_twomoons") {
    j["n_grid"] = {50, 200, 800};
    j["dataset"]["test_size"] = 1000;
    j["ensemble"] = {{"members", 5}};
  } else {
    fail(ErrorCode::ConfigError, "experiment: unknown experiment '" + experiment + "'");
  }
  return j;
}

namespace detail {

inline const char* json_kind(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

/// Overlays `user` on `base`, rejecting unknown keys and type changes.
inline void merge_strict(json& base, const json& user, const std::string& path) {
  require(user.is_object(), ErrorCode::ConfigError, (path.empty() ? "<root>" : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string field = path.empty() ? it.key() : path + "." + it.key();
    require(base.contains(it.key()), ErrorCode::ConfigError, field + ": unknown field");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), field);
      continue;
    }
    const bool same = (slot.is_number() && it.value().is_number()) || (slot.is_boolean() && it.value().is_boolean()) ||
                      (slot.is_string() && it.value().is_string()) || (slot.is_array() && it.value().is_array());
    require(same, ErrorCode::ConfigError,
            field + ": expected " + json_kind(slot) + ", got " + json_kind(it.value()));
    slot = it.value();
  }
}

inline void set_path(json& root, const std::string& dotted, const json& value) {
  json* node = &root;
  std::string rest = dotted;
  for (;;) {
    const auto dot = rest.find('.');
    if (dot == std::string::npos) {
      (*node)[rest] = value;
      return;
    }
    node = &(*node)[rest.substr(0, dot)];
    rest = rest.substr(dot + 1);
  }
}

template <typename T>
T get_field(const json& j, const std::string& path) {
  const json* node = &j;
  std::string rest = path;
  for (;;) {
    const auto dot = rest.find('.');
    const std::string key = rest.substr(0, dot);
    require(node->contains(key), ErrorCode::ConfigError, path + ": missing field");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    rest = rest.substr(dot + 1);
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigError, path + ": wrong type");
  }
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  int folds = 1;
  std::vector<int> n_grid;
  std::string output_dir;
  double n_min = 0.0;
  unsigned threads = 0;  // 0 = hardware concurrency

  TwoMoonsParams moons;
  int test_size = 100;
  std::vector<int> hidden;
  TrainConfig train;

  // blr_scaling
  int blr_dim = 5;
  double blr_noise_sd = 0.5;
  double blr_prior_var = 1.0;
  // lla_sweep / spectrum
  std::vector<double> lambda_grid;
  int mc_samples = 1000;
  double map_weight_decay = 0.03;
  // hmc_twomoons
  HMCConfig hmc;
  // mcd_twomoons
  double dropout_rate = 0.5;
  int passes = 100;
  // de_twomoons
  int members = 5;

  json tree;  // fully merged configuration

  /// Stable under key reordering: the tree is an ordered map and is dumped
  /// canonically.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a64(tree.dump())));
    return buf;
  }

  MLPSpec mlp_spec() const {
    std::vector<int> sizes{2};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(2);
    return MLPSpec::tanh_mlp(sizes);
  }
};

/// Builds a validated config from a user tree plus `key=value` overrides
/// (values parsed as JSON when possible, else taken as strings).
inline ExperimentConfig parse_config(const json& user_in, const std::vector<std::string>& overrides = {}) {
  json user = user_in.is_null() ? json::object() : user_in;
  require(user.is_object(), ErrorCode::ConfigError, "<root>: expected an object");
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::ConfigError, "--set expects key=value, got '" + ov + "'");
    const std::string key = ov.substr(0, eq);
    const std::string text = ov.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    detail::set_path(user, key, value);
  }
  require(user.contains("experiment"), ErrorCode::ConfigError, "experiment: missing field");
  require(user["experiment"].is_string(), ErrorCode::ConfigError, "experiment: expected string");
  const std::string name = user["experiment"].get<std::string>();
  bool known = false;
  for (const auto& n : experiment_names()) known = known || n == name;
  require(known, ErrorCode::ConfigError, "experiment: unknown experiment '" + name + "'");

  json tree = default_config(name);
  detail::merge_strict(tree, user, "");
  if (detail::get_field<bool>(tree, "full_grid") && name == "hmc_twomoons")
    tree["n_grid"] = log_spaced_grid(100, 1e6, 12);

  ExperimentConfig c;
  c.experiment = name;
  c.tree = tree;
  c.seed = detail::get_field<std::uint64_t>(tree, "seed");
  c.folds = detail::get_field<int>(tree, "folds");
  c.n_grid = detail::get_field<std::vector<int>>(tree, "n_grid");
  c.output_dir = detail::get_field<std::string>(tree, "output_dir");
  c.n_min = detail::get_field<double>(tree, "n_min");
  c.threads = detail::get_field<unsigned>(tree, "threads");
  require(c.folds >= 1, ErrorCode::ConfigError, "folds: must be >= 1");
  require(!c.n_grid.empty(), ErrorCode::ConfigError, "n_grid: must not be empty");
  for (std::size_t i = 0; i < c.n_grid.size(); ++i) {
    require(c.n_grid[i] >= 1, ErrorCode::ConfigError, "n_grid: entries must be >= 1");
    require(i == 0 || c.n_grid[i] > c.n_grid[i - 1], ErrorCode::ConfigError, "n_grid: must be strictly increasing");
  }

  c.moons.noise_sd = detail::get_field<double>(tree, "dataset.noise_sd");
  const auto shift = detail::get_field<std::vector<double>>(tree, "dataset.shift");
  require(shift.size() == 2, ErrorCode::ConfigError, "dataset.shift: expected two numbers");
  c.moons.shift_x = shift[0];
  c.moons.shift_y = shift[1];
  c.test_size = detail::get_field<int>(tree, "dataset.test_size");
  require(c.test_size >= 2, ErrorCode::ConfigError, "dataset.test_size: must be >= 2");
  require(c.moons.noise_sd >= 0.0, ErrorCode::ConfigError, "dataset.noise_sd: must be >= 0");
  c.hidden = detail::get_field<std::vector<int>>(tree, "model.hidden");
  for (int h : c.hidden) require(h >= 1, ErrorCode::ConfigError, "model.hidden: sizes must be >= 1");

  c.train.step_size = detail::get_field<double>(tree, "train.step_size");
  c.train.max_epochs = detail::get_field<int>(tree, "train.max_epochs");
  c.train.beta1 = detail::get_field<double>(tree, "train.beta1");
  c.train.beta2 = detail::get_field<double>(tree, "train.beta2");
  c.train.convergence_tol = detail::get_field<double>(tree, "train.convergence_tol");
  c.train.prior_precision = detail::get_field<double>(tree, "train.prior_precision");
  try {
    c.train.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, std::string("train: ") + e.what());
  }

  if (name == "blr_scaling") {
    c.blr_dim = detail::get_field<int>(tree, "blr.dim");
    c.blr_noise_sd = detail::get_field<double>(tree, "blr.noise_sd");
    c.blr_prior_var = detail::get_field<double>(tree, "blr.prior_var");
    require(c.blr_dim >= 1, ErrorCode::ConfigError, "blr.dim: must be >= 1");
    require(c.blr_noise_sd > 0.0, ErrorCode::ConfigError, "blr.noise_sd: must be > 0");
    require(c.blr_prior_var > 0.0, ErrorCode::ConfigError, "blr.prior_var: must be > 0");
  } else if (name == "lla_sweep" || name == "spectrum") {
    c.lambda_grid = detail::get_field<std::vector<double>>(tree, "lla.lambda_grid");
    c.mc_samples = detail::get_field<int>(tree, "lla.mc_samples");
    c.map_weight_decay = detail::get_field<double>(tree, "lla.map_weight_decay");
    require(c.map_weight_decay >= 0.0, ErrorCode::ConfigError, "lla.map_weight_decay: must be >= 0");
    require(!c.lambda_grid.empty(), ErrorCode::ConfigError, "lla.lambda_grid: must not be empty");
    for (double l : c.lambda_grid) require(l > 0.0, ErrorCode::ConfigError, "lla.lambda_grid: entries must be > 0");
    require(c.mc_samples >= 2, ErrorCode::ConfigError, "lla.mc_samples: must be >= 2");
  } else if (name == "hmc_twomoons") {
    c.hmc.step_size = detail::get_field<double>(tree, "hmc.step_size");
    c.hmc.leapfrog_steps = detail::get_field<int>(tree, "hmc.leapfrog_steps");
    c.hmc.warmup = detail::get_field<int>(tree, "hmc.warmup");
    c.hmc.samples = detail::get_field<int>(tree, "hmc.samples");
    c.hmc.prior_sd = detail::get_field<double>(tree, "hmc.prior_sd");
    c.hmc.adapt_step_size = detail::get_field<bool>(tree, "hmc.adapt_step_size");
    c.hmc.target_accept = detail::get_field<double>(tree, "hmc.target_accept");
    try {
      c.hmc.validate();
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, std::string("hmc: ") + e.what());
    }
  } else if (name == "mcd_twomoons") {
    c.dropout_rate = detail::get_field<double>(tree, "mcd.rate");
    c.passes = detail::get_field<int>(tree, "mcd.passes");
    require(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0, ErrorCode::ConfigError, "mcd.rate: must be in [0, 1)");
    require(c.passes >= 1, ErrorCode::ConfigError, "mcd.passes: must be >= 1");
  } else if (name == "de_twomoons") {
    c.members = detail::get_field<int>(tree, "ensemble.members");
    require(c.members >= 1, ErrorCode::ConfigError, "ensemble.members: must be >= 1");
  }
  return c;
}

inline json load_config_file(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open config " + path);
  json j = json::parse(is, nullptr, false, /*ignore_comments=*/true);
  require(!j.is_discarded(), ErrorCode::ConfigError, "<root>: " + path + " is not valid JSON");
  return j;
}

// ---------------------------------------------------------------------------
// Curves

/// One row of curves.csv.
struct CurveRow {
  std::string experiment;
  std::string metric;
  std::string method;
  double lambda = 0.0;
  double n = 0.0;
  int fold = 0;
  double value = 0.0;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kCurvesHeader = "experiment,metric,method,lambda,n,fold,value";

inline void write_curves_csv(std::ostream& os, const std::vector<CurveRow>& rows) {
  os << kCurvesHeader << '\n';
  for (const auto& r : rows)
    os << r.experiment << ',' << r.metric << ',' << r.method << ',' << format_double(r.lambda) << ','
       << format_double(r.n) << ',' << r.fold << ',' << format_double(r.value) << '\n';
}

inline std::vector<CurveRow> read_curves_csv(std::istream& is) {
  std::vector<CurveRow> rows;
  std::string line;
  int line_no = 0;
  auto schema_error = [&](const std::string& why) {
    fail(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": " + why);
  };
  if (!std::getline(is, line)) {
    line_no = 1;
    schema_error("missing header");
  }
  line_no = 1;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCurvesHeader) schema_error("expected header '" + std::string(kCurvesHeader) + "'");
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) schema_error("expected 7 fields, got " + std::to_string(f.size()));
    auto num = [&](const std::string& s, const char* what) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (...) {
        schema_error(std::string("invalid ") + what + " '" + s + "'");
      }
      if (used != s.size()) schema_error(std::string("invalid ") + what + " '" + s + "'");
      return v;
    };
    CurveRow r;
    r.experiment = f[0];
    r.metric = f[1];
    r.method = f[2];
    if (r.experiment.empty() || r.metric.empty() || r.method.empty()) schema_error("empty key field");
    r.lambda = num(f[3], "lambda");
    r.n = num(f[4], "n");
    const double fold = num(f[5], "fold");
    if (fold != std::floor(fold) || fold < 0) schema_error("fold must be a nonnegative integer");
    r.fold = static_cast<int>(fold);
    r.value = num(f[6], "value");
    if (!(r.n > 0.0)) schema_error("n must be positive");
    rows.push_back(std::move(r));
  }
  return rows;
}

struct CurveKey {
  std::string experiment, metric, method;
  double lambda;
  auto operator<=>(const CurveKey&) const = default;
};

/// Groups rows into curves, preserving first-appearance order.
inline std::vector<std::pair<CurveKey, ScalingCurve>> group_curves(const std::vector<CurveRow>& rows) {
  std::vector<std::pair<CurveKey, ScalingCurve>> out;
  std::map<CurveKey, std::size_t> index;
  for (const auto& r : rows) {
    const CurveKey key{r.experiment, r.metric, r.method, r.lambda};
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      ScalingCurve c;
      c.metric = r.metric;
      out.emplace_back(key, std::move(c));
    }
    out[it->second].second.add(r.n, r.value, r.fold);
  }
  return out;
}

struct FitEntry {
  CurveKey key;
  std::string kind;  // "loglog" or "floor"
  double n_min = 0.0;
  PowerLawFit fit;
};

/// Fits for every curve: log-log on all points, log-log above n_min (when
/// set), and the floored power law when there are enough distinct N. Curves
/// that cannot be fitted (e.g. negative values) are skipped.
inline std::vector<FitEntry> compute_fits(const std::vector<CurveRow>& rows, double n_min) {
  std::vector<FitEntry> out;
  for (const auto& [key, curve] : group_curves(rows)) {
    auto attempt = [&](const std::string& kind, double trim) {
      try {
        const FitOptions opts{trim};
        PowerLawFit f = kind == "floor" ? fit_powerlaw_floor(curve, opts) : fit_loglog(curve, opts);
        out.push_back({key, kind, trim, f});
      } catch (const Error&) {
      }
    };
    attempt("loglog", 0.0);
    if (n_min > 0.0) attempt("loglog", n_min);
    attempt("floor", 0.0);
  }
  return out;
}

inline std::string fits_json_text(const std::vector<FitEntry>& fits) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& f : fits) {
    auto rec = fit_record_json(f.key.metric, f.key.method, f.key.lambda, f.kind, f.n_min, f.fit);
    nlohmann::ordered_json full;
    full["experiment"] = f.key.experiment;
    for (auto it = rec.begin(); it != rec.end(); ++it) full[it.key()] = it.value();
    arr.push_back(std::move(full));
  }
  return arr.dump(2) + "\n";
}

inline std::string fits_table(const std::vector<FitEntry>& fits) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-10s %-8s %10s %-7s %8s %10s %10s %12s %6s\n", "experiment", "metric",
                "method", "lambda", "fit", "n_min", "gamma", "stderr", "c", "r2");
  os << line;
  for (const auto& f : fits) {
    std::snprintf(line, sizeof line, "%-14s %-10s %-8s %10.4g %-7s %8.4g %10.3f %10.3f %12.4g %6.3f\n",
                  f.key.experiment.c_str(), f.key.metric.c_str(), f.key.method.c_str(), f.key.lambda, f.kind.c_str(),
                  f.n_min, f.fit.exponent, f.fit.exponent_stderr, f.fit.floor, f.fit.r2);
    os << line;
  }
  return os.str();
}

inline std::string report_svg(const std::string& title, const std::vector<CurveRow>& rows,
                              const std::vector<FitEntry>& fits) {
  std::vector<PlotSeries> series;
  for (const auto& [key, curve] : group_curves(rows)) {
    PlotSeries s;
    std::ostringstream label;
    label << key.metric << " (" << key.method;
    if (key.experiment == "lla_sweep" || key.experiment == "spectrum") label << ", lambda=" << key.lambda;
    label << ")";
    s.label = label.str();
    std::map<double, std::pair<double, int>> agg;
    for (const auto& p : curve.points) {
      if (!(p.value > 0.0)) continue;
      auto& a = agg[p.n];
      a.first += std::log(p.value);
      a.second += 1;
    }
    for (const auto& [n, a] : agg) {
      s.x.push_back(n);
      s.y.push_back(std::exp(a.first / a.second));
    }
    for (const auto& f : fits)
      if (f.key == key && f.kind == "loglog" && f.n_min == 0.0) {
        s.has_fit = true;
        s.a = f.fit.amplitude;
        s.gamma = f.fit.exponent;
        s.c = f.fit.floor;
      }
    series.push_back(std::move(s));
  }
  return render_loglog_svg(title, series);
}

// ---------------------------------------------------------------------------
// Cells. Every cell derives its streams from (seed, fold, N) through the
// `streams` ids, so a single curves.csv row can be recomputed directly.

struct MetricValue {
  std::string metric;
  double value;
};

/// BLR on linear-Gaussian data: test-averaged TU, AU, entropy-gap EU and the
/// epistemic variance part.
inline std::vector<MetricValue> blr_cell(const ExperimentConfig& c, int n, int fold) {
  const Eigen::Index d = c.blr_dim;
  const Vector theta_true = Vector::Ones(d);
  const SymMatrix cov = SymMatrix::identity(d);
  RngStream test_stream(c.seed, streams::kTest);
  const LabeledDataset test = gen_linear_gaussian(c.test_size, theta_true, c.blr_noise_sd, cov, test_stream);
  RngStream train_stream(c.seed, streams::train(static_cast<std::uint64_t>(fold)));
  const LabeledDataset train = gen_linear_gaussian(n, theta_true, c.blr_noise_sd, cov, train_stream);
  BLRModel model{Basis::identity(d), Vector::Zero(d), c.blr_prior_var * SymMatrix::identity(d),
                 c.blr_noise_sd * c.blr_noise_sd};
  const GaussianPosterior post = blr_fit(model, train);
  double tu = 0.0, au = 0.0, eu = 0.0, eu_var = 0.0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const PredictiveGaussian pg = blr_predict(post, model, test.inputs.row(i).transpose());
    tu += pg.tu();
    au += pg.au();
    eu += pg.eu();
    eu_var += pg.epistemic_part;
  }
  const double m = static_cast<double>(test.size());
  return {{"tu", tu / m}, {"au", au / m}, {"eu", eu / m}, {"eu_var", eu_var / m}};
}

inline LLAConfig lla_config_from(const ExperimentConfig& c) {
  LLAConfig l;
  l.n_grid = c.n_grid;
  l.lambda_grid = c.lambda_grid;
  l.folds = c.folds;
  l.hidden = c.hidden;
  l.test_size = c.test_size;
  l.mc_samples = c.mc_samples;
  l.noise_sd = c.moons.noise_sd;
  l.seed = c.seed;
  l.train = c.train;
  l.spectrum = c.experiment == "spectrum";
  l.map_weight_decay = c.map_weight_decay;
  return l;
}

inline LabeledDataset twomoons_test_set(const ExperimentConfig& c) {
  RngStream test_stream(c.seed, streams::kTest);
  return gen_two_moons(c.test_size, c.moons, test_stream);
}

inline LabeledDataset twomoons_train_set(const ExperimentConfig& c, int n, int fold) {
  RngStream s(c.seed, streams::train(static_cast<std::uint64_t>(fold)));
  return gen_two_moons(n, {c.moons.noise_sd, 0.0, 0.0}, s);
}

struct HMCCellResult {
  UncertaintyTriple avg;
  double accept_rate = 0.0;
  double step_size = 0.0;
};

/// HMC over the BNN posterior, initialised at a MAP fit.
inline HMCCellResult hmc_cell(const ExperimentConfig& c, int n, int fold, const LabeledDataset& test) {
  const MLPSpec spec = c.mlp_spec();
  const LabeledDataset train = twomoons_train_set(c, n, fold);
  RngStream init_stream(c.seed, streams::init(static_cast<std::uint64_t>(fold)));
  TrainConfig tc = c.train;
  tc.prior_precision = 1.0 / (c.hmc.prior_sd * c.hmc.prior_sd);
  const TrainResult map = train_map(spec, train, tc, init_stream);
  RngStream chain_stream(c.seed, streams::inference(static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(n)));
  const PosteriorSamples samples = hmc_sample(bnn_log_posterior(spec, train, c.hmc.prior_sd), map.theta, c.hmc,
                                              chain_stream);
  return {average_decomposition(samples.draws, spec, test.inputs, EnsembleSource::hmc), samples.accept_rate,
          samples.final_step_size};
}

inline UncertaintyTriple mcd_cell(const ExperimentConfig& c, int n, int fold, const LabeledDataset& test) {
  const MLPSpec spec = c.mlp_spec();
  const LabeledDataset train = twomoons_train_set(c, n, fold);
  RngStream init_stream(c.seed, streams::init(static_cast<std::uint64_t>(fold)));
  TrainConfig tc = c.train;
  tc.dropout_rate = c.dropout_rate;
  const TrainResult map = train_map(spec, train, tc, init_stream);
  RngStream mask_stream(c.seed, streams::inference(static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(n)));
  std::vector<UncertaintyTriple> per_point(static_cast<std::size_t>(test.size()));
  for (Eigen::Index i = 0; i < test.size(); ++i)
    per_point[static_cast<std::size_t>(i)] =
        decompose_entropy(mcd_predict(spec, map.theta, test.inputs.row(i).transpose(), c.dropout_rate, c.passes, mask_stream));
  return average_metrics(per_point);
}

inline UncertaintyTriple de_cell(const ExperimentConfig& c, int n, int fold, const LabeledDataset& test) {
  const MLPSpec spec = c.mlp_spec();
  const LabeledDataset train = twomoons_train_set(c, n, fold);
  std::vector<RngStream> seeds;
  for (int m = 0; m < c.members; ++m)
    seeds.emplace_back(c.seed, streams::init(static_cast<std::uint64_t>(fold)) + 0x100'0000ull * static_cast<std::uint64_t>(m));
  const auto members = deep_ensemble_train(spec, train, c.train, seeds);
  return average_decomposition(stack_members(members), spec, test.inputs, EnsembleSource::deep_ensemble);
}

// ---------------------------------------------------------------------------
// Runner

struct RunRecord {
  std::string config_hash;
  std::vector<CurveRow> rows;
  std::vector<FitEntry> fits;
  double wall_clock_seconds = 0.0;
  std::string version = UQSCALE_VERSION;
  json extra;  // per-experiment diagnostics (e.g. HMC acceptance)
};

inline std::vector<CurveRow> collect_rows(const ExperimentConfig& c, json& extra) {
  std::vector<CurveRow> rows;
  const std::string& ex = c.experiment;
  const unsigned workers = c.threads == 0 ? default_workers() : c.threads;

  if (ex == "lla_sweep" || ex == "spectrum") {
    LLAConfig l = lla_config_from(c);
    const LabeledDataset test = twomoons_test_set(c);
    std::vector<LLACell> cells;
    for (double lambda : l.lambda_grid)
      for (int n : l.n_grid)
        for (int f = 0; f < l.folds; ++f) cells.push_back({lambda, n, f});
    l.eu_metrics = ex != "spectrum";
    parallel_for(
        cells.size(), [&](std::size_t i) { cells[i] = lla_cell(l, cells[i].lambda, cells[i].n, cells[i].fold, test); },
        workers);
    const std::vector<std::string> metrics =
        ex == "spectrum" ? std::vector<std::string>{"max_eig", "mean_eig"}
                         : std::vector<std::string>{"eu_logit", "eu_var", "eu_ent"};
    for (const auto& metric : metrics)
      for (const auto& cell : cells) {
        double v = 0.0;
        if (metric == "eu_logit") v = cell.eu_logit;
        else if (metric == "eu_var") v = cell.eu_var;
        else if (metric == "eu_ent") v = cell.eu_ent;
        else if (metric == "max_eig") v = cell.max_eig;
        else v = cell.mean_eig;
        rows.push_back({ex, metric, "lla", cell.lambda, static_cast<double>(cell.n), cell.fold, v});
      }
    return rows;
  }

  struct Cell {
    int n, fold;
  };
  std::vector<Cell> cells;
  for (int n : c.n_grid)
    for (int f = 0; f < c.folds; ++f) cells.push_back({n, f});
  std::vector<std::vector<MetricValue>> values(cells.size());

  std::string method;
  double lambda = c.train.prior_precision;
  if (ex == "blr_scaling") {
    method = "blr";
    lambda = 1.0 / c.blr_prior_var;
    parallel_for(cells.size(), [&](std::size_t i) { values[i] = blr_cell(c, cells[i].n, cells[i].fold); }, workers);
  } else {
    const LabeledDataset test = twomoons_test_set(c);
    auto triple = [](const UncertaintyTriple& t) {
      return std::vector<MetricValue>{{"tu", t.tu}, {"au", t.au}, {"eu", t.eu_reported()}};
    };
    if (ex == "hmc_twomoons") {
      method = "hmc";
      lambda = 1.0 / (c.hmc.prior_sd * c.hmc.prior_sd);
      std::vector<HMCCellResult> res(cells.size());
      parallel_for(cells.size(), [&](std::size_t i) { res[i] = hmc_cell(c, cells[i].n, cells[i].fold, test); }, workers);
      json diag = json::array();
      for (std::size_t i = 0; i < cells.size(); ++i) {
        values[i] = triple(res[i].avg);
        diag.push_back({{"n", cells[i].n}, {"fold", cells[i].fold}, {"accept_rate", res[i].accept_rate},
                        {"step_size", res[i].step_size}});
      }
      extra["hmc"] = diag;
    } else if (ex == "mcd_twomoons") {
      method = "mcd";
      parallel_for(cells.size(), [&](std::size_t i) { values[i] = triple(mcd_cell(c, cells[i].n, cells[i].fold, test)); },
                   workers);
    } else if (ex == "de_twomoons") {
      method = "de";
      parallel_for(cells.size(), [&](std::size_t i) { values[i] = triple(de_cell(c, cells[i].n, cells[i].fold, test)); },
                   workers);
    }
  }
  // Metric-major order, then N, then fold.
  for (std::size_t m = 0; m < values.front().size(); ++m)
    for (std::size_t i = 0; i < cells.size(); ++i)
      rows.push_back({ex, values[i][m].metric, method, lambda, static_cast<double>(cells[i].n), cells[i].fold,
                      values[i][m].value});
  return rows;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot open " + path.string());
  os << text;
  require(static_cast<bool>(os), ErrorCode::IoError, "write failed for " + path.string());
}

/// Runs the sweep and writes curves.csv, fits.json, report.svg and run.json
/// into the output directory.
inline RunRecord run_experiment(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  require(!ec && fs::is_directory(c.output_dir), ErrorCode::IoError, "cannot create output_dir " + c.output_dir);

  RunRecord rec;
  rec.config_hash = c.hash();
  rec.rows = collect_rows(c, rec.extra);
  rec.fits = compute_fits(rec.rows, c.n_min);

  const fs::path dir(c.output_dir);
  {
    std::ostringstream os;
    write_curves_csv(os, rec.rows);
    write_text_file(dir / "curves.csv", os.str());
  }
  write_text_file(dir / "fits.json", fits_json_text(rec.fits));
  write_text_file(dir / "report.svg", report_svg(c.experiment, rec.rows, rec.fits));

  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json run;
  run["config_hash"] = rec.config_hash;
  run["config"] = c.tree;
  run["version"] = rec.version;
  run["wall_clock_seconds"] = rec.wall_clock_seconds;
  run["rows"] = rec.rows.size();
  if (!rec.extra.is_null()) run["diagnostics"] = rec.extra;
  write_text_file(dir / "run.json", run.dump(2) + "\n");
  return rec;
}

struct ReportResult {
  std::vector<FitEntry> fits;
  std::string table;
};

/// Re-fits an existing curves.csv; writes fits.json into out_dir.
inline ReportResult report(const std::string& curves_path, const std::string& out_dir, double n_min = 0.0) {
  std::ifstream is(curves_path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + curves_path);
  const auto rows = read_curves_csv(is);
  ReportResult out;
  out.fits = compute_fits(rows, n_min);
  out.table = fits_table(out.fits);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  write_text_file(std::filesystem::path(out_dir) / "fits.json", fits_json_text(out.fits));
  return out;
}

}  // namespace uqscale
