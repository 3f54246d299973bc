#pragma once

// Power-law fits U(N) = a N^gamma + c on uncertainty-vs-data curves, with
// extrapolation, threshold inversion and knee (plateau -> decay) detection.
//
// All fits work on fold-averaged points: values sharing the same N are
// combined by their geometric mean before fitting in log-log space.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "uqscale/errors.hpp"

namespace uqscale {

struct CurvePoint {
  double n = 0.0;
  double value = 0.0;
  int fold = 0;
};

struct ScalingCurve {
  std::string metric;
  std::string units = "nats";
  std::vector<CurvePoint> points;

  void add(double n, double value, int fold) { points.push_back({n, value, fold}); }
};

struct PowerLawFit {
  double amplitude = 0.0;  // a
  double exponent = 0.0;   // gamma
  double floor = 0.0;      // c
  double r2 = 0.0;
  double exponent_stderr = 0.0;
  double intercept_stderr = 0.0;        // of ln a
  double intercept_exponent_cov = 0.0;  // cov(ln a, gamma)
  double residual_var = 0.0;            // log-space residual variance
  int n_points = 0;                     // distinct N used
  bool clamped = false;                 // some values were clamped to kValueClamp

  double operator()(double n) const { return amplitude * std::pow(n, exponent) + floor; }
};

struct FitOptions {
  /// Points with N < n_min are dropped before fitting.
  double n_min = 0.0;
};

/// Nonpositive values down to this tolerance are clamped rather than rejected.
inline constexpr double kValueClamp = 1e-15;
inline constexpr double kNegativeTolerance = 1e-6;

namespace detail {

struct AveragedCurve {
  std::vector<double> n;
  std::vector<double> value;  // geometric mean over folds
  bool clamped = false;
};

inline AveragedCurve fold_average(const ScalingCurve& curve, const FitOptions& opts) {
  std::map<double, std::vector<double>> groups;
  AveragedCurve out;
  for (const auto& p : curve.points) {
    require(std::isfinite(p.n) && p.n > 0.0, ErrorCode::InvalidArgument, "resource N must be positive");
    require(std::isfinite(p.value), ErrorCode::NonPositiveValue, "non-finite value in curve " + curve.metric);
    if (p.n < opts.n_min) continue;
    double v = p.value;
    if (v <= 0.0) {
      require(v >= -kNegativeTolerance, ErrorCode::NonPositiveValue, "negative value in curve " + curve.metric);
      v = kValueClamp;
      out.clamped = true;
    }
    groups[p.n].push_back(std::log(v));
  }
  for (auto& [n, logs] : groups) {
    std::sort(logs.begin(), logs.end());
    double s = 0.0;
    for (double l : logs) s += l;
    out.n.push_back(n);
    out.value.push_back(std::exp(s / static_cast<double>(logs.size())));
  }
  return out;
}

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double rss = 0.0;
  double sst = 0.0;
  double mean_x = 0.0;
  double sxx = 0.0;
};

inline LineFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  const double m = static_cast<double>(x.size());
  LineFit f;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    f.mean_x += x[i];
    my += y[i];
  }
  f.mean_x /= m;
  my /= m;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - f.mean_x;
    f.sxx += dx * dx;
    sxy += dx * (y[i] - my);
    f.sst += (y[i] - my) * (y[i] - my);
  }
  f.slope = sxy / f.sxx;
  f.intercept = my - f.slope * f.mean_x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    f.rss += r * r;
  }
  return f;
}

inline PowerLawFit loglog_on(const std::vector<double>& n, const std::vector<double>& u, double floor,
                             bool clamped) {
  std::vector<double> x(n.size());
  std::vector<double> y(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    x[i] = std::log(n[i]);
    y[i] = std::log(u[i] - floor);
  }
  const LineFit line = ols(x, y);
  const double m = static_cast<double>(n.size());
  PowerLawFit fit;
  fit.amplitude = std::exp(line.intercept);
  fit.exponent = line.slope;
  fit.floor = floor;
  fit.n_points = static_cast<int>(n.size());
  fit.clamped = clamped;
  fit.residual_var = n.size() > 2 ? line.rss / (m - 2.0) : 0.0;
  fit.exponent_stderr = std::sqrt(fit.residual_var / line.sxx);
  fit.intercept_stderr = std::sqrt(fit.residual_var * (1.0 / m + line.mean_x * line.mean_x / line.sxx));
  fit.intercept_exponent_cov = -line.mean_x * fit.residual_var / line.sxx;
  if (line.sst > 0.0) fit.r2 = std::clamp(1.0 - line.rss / line.sst, 0.0, 1.0);
  else fit.r2 = 1.0;
  return fit;
}

inline void require_distinct(const AveragedCurve& avg, std::size_t needed) {
  require(avg.n.size() >= needed, ErrorCode::DegenerateAbscissa,
          "need at least " + std::to_string(needed) + " distinct N values");
}

/// Residual sum of squares, in the original units, of a N^gamma + c where
/// (a, gamma) come from the line fit to ln(U - c). Measuring the misfit in
/// log space would let noise on points sitting just above the floor dominate
/// and push c to zero.
inline double profile_rss(const AveragedCurve& avg, double c) {
  std::vector<double> x(avg.n.size());
  std::vector<double> y(avg.n.size());
  for (std::size_t i = 0; i < avg.n.size(); ++i) {
    x[i] = std::log(avg.n[i]);
    y[i] = std::log(avg.value[i] - c);
  }
  const LineFit line = ols(x, y);
  double rss = 0.0;
  for (std::size_t i = 0; i < avg.n.size(); ++i) {
    const double r = avg.value[i] - c - std::exp(line.intercept + line.slope * x[i]);
    rss += r * r;
  }
  return rss;
}

}  // namespace detail

/// OLS of ln U on ln N with the floor fixed at zero.
inline PowerLawFit fit_loglog(const ScalingCurve& curve, const FitOptions& opts = {}) {
  const auto avg = detail::fold_average(curve, opts);
  detail::require_distinct(avg, 2);
  return detail::loglog_on(avg.n, avg.value, 0.0, avg.clamped);
}

/// Power law with a floor. The floor is profiled over [0, min U): a 64-point
/// grid, golden-section refinement, then a Gauss-Newton polish of
/// (ln a, gamma, c) jointly. The misfit is measured in the original units;
/// amplitude and exponent are reported from the log-space line at the chosen c.
inline PowerLawFit fit_powerlaw_floor(const ScalingCurve& curve, const FitOptions& opts = {}) {
  const auto avg = detail::fold_average(curve, opts);
  detail::require_distinct(avg, 4);
  const double u_min = *std::min_element(avg.value.begin(), avg.value.end());

  // Grid in the gap g = 1 - c / u_min, log-spaced from 1 (c = 0) to 1e-9.
  constexpr int kGrid = 64;
  std::vector<double> cs(kGrid);
  for (int k = 0; k < kGrid; ++k) {
    const double g = std::pow(10.0, -9.0 * k / (kGrid - 1));
    cs[static_cast<std::size_t>(k)] = k == 0 ? 0.0 : u_min * (1.0 - g);
  }
  std::size_t best = 0;
  double best_rss = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cs.size(); ++k) {
    const double r = detail::profile_rss(avg, cs[k]);
    if (r < best_rss) {
      best_rss = r;
      best = k;
    }
  }

  double c_best = cs[best];
  if (best > 0) {
    // Golden section between the neighbouring grid points.
    double lo = cs[best - 1];
    double hi = best + 1 < cs.size() ? cs[best + 1] : cs[best];
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - phi * (hi - lo);
    double x2 = lo + phi * (hi - lo);
    double f1 = detail::profile_rss(avg, x1);
    double f2 = detail::profile_rss(avg, x2);
    for (int it = 0; it < 200 && hi - lo > 1e-15 * u_min; ++it) {
      if (f1 < f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - phi * (hi - lo);
        f1 = detail::profile_rss(avg, x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + phi * (hi - lo);
        f2 = detail::profile_rss(avg, x2);
      }
    }
    const double c_gs = f1 < f2 ? x1 : x2;
    const double r_gs = std::min(f1, f2);
    if (r_gs < best_rss) {
      best_rss = r_gs;
      c_best = c_gs;
    }
  }

  // Gauss-Newton on r_i = U_i - c - exp(alpha + gamma ln N_i).
  if (c_best > 0.0) {
    PowerLawFit start = detail::loglog_on(avg.n, avg.value, c_best, avg.clamped);
    double alpha = std::log(start.amplitude);
    double gamma = start.exponent;
    double c = c_best;
    auto rss_at = [&](double a_, double g_, double c_) {
      double s = 0.0;
      for (std::size_t i = 0; i < avg.n.size(); ++i) {
        const double r = avg.value[i] - c_ - std::exp(a_ + g_ * std::log(avg.n[i]));
        s += r * r;
      }
      return s;
    };
    double rss = rss_at(alpha, gamma, c);
    for (int it = 0; it < 50; ++it) {
      // Normal equations J^T J d = -J^T r for parameters (alpha, gamma, c).
      double jtj[3][3] = {};
      double jtr[3] = {};
      for (std::size_t i = 0; i < avg.n.size(); ++i) {
        const double x = std::log(avg.n[i]);
        const double e = std::exp(alpha + gamma * x);
        const double r = avg.value[i] - c - e;
        const double j[3] = {-e, -x * e, -1.0};
        for (int p = 0; p < 3; ++p) {
          jtr[p] += j[p] * r;
          for (int q = 0; q < 3; ++q) jtj[p][q] += j[p] * j[q];
        }
      }
      // Cramer's rule on the 3x3 system.
      auto det3 = [](const double m[3][3]) {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
      };
      const double det = det3(jtj);
      if (!(std::abs(det) > 0.0)) break;
      double delta[3];
      for (int p = 0; p < 3; ++p) {
        double mp[3][3];
        for (int r = 0; r < 3; ++r)
          for (int q = 0; q < 3; ++q) mp[r][q] = q == p ? -jtr[r] : jtj[r][q];
        delta[p] = det3(mp) / det;
      }
      double step = 1.0;
      bool improved = false;
      for (int h = 0; h < 30; ++h, step *= 0.5) {
        const double c_new = c + step * delta[2];
        if (!(c_new >= 0.0 && c_new < u_min)) continue;
        const double a_new = alpha + step * delta[0];
        const double g_new = gamma + step * delta[1];
        const double r_new = rss_at(a_new, g_new, c_new);
        if (r_new < rss) {
          alpha = a_new;
          gamma = g_new;
          c = c_new;
          rss = r_new;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    c_best = c;
  }

  if (c_best <= 0.0) return detail::loglog_on(avg.n, avg.value, 0.0, avg.clamped);
  return detail::loglog_on(avg.n, avg.value, c_best, avg.clamped);
}

struct Extrapolation {
  double value = 0.0;
  double stderr_value = 0.0;  // first-order propagated standard error
  double lower = 0.0;
  double upper = 0.0;
};

/// Evaluates the fit at n_target. The band is a prediction interval: the
/// log-space variance combines the intercept/exponent covariance with the
/// residual variance, scaled by the two-sided 95% Student-t quantile.
inline Extrapolation extrapolate(const PowerLawFit& fit, double n_target) {
  require(n_target > 0.0, ErrorCode::InvalidArgument, "n_target must be positive");
  const double x = std::log(n_target);
  const double body = fit.amplitude * std::pow(n_target, fit.exponent);
  const double log_var = fit.intercept_stderr * fit.intercept_stderr + x * x * fit.exponent_stderr * fit.exponent_stderr +
                         2.0 * x * fit.intercept_exponent_cov + fit.residual_var;
  const double log_se = std::sqrt(std::max(0.0, log_var));
  double t = 2.0;
  if (fit.n_points > 2) {
    boost::math::students_t dist(static_cast<double>(fit.n_points - 2));
    t = boost::math::quantile(boost::math::complement(dist, 0.025));
  }
  Extrapolation out;
  out.value = body + fit.floor;
  out.stderr_value = body * log_se;
  out.lower = fit.floor + body * std::exp(-t * log_se);
  out.upper = fit.floor + body * std::exp(t * log_se);
  return out;
}

/// Smallest N with a N^gamma + c <= epsilon, or nullopt when the curve never
/// gets there (non-decaying fit or epsilon at or below the floor).
inline std::optional<double> threshold_crossing(const PowerLawFit& fit, double epsilon) {
  require(epsilon > 0.0, ErrorCode::InvalidArgument, "epsilon must be positive");
  if (!(fit.exponent < 0.0) || epsilon <= fit.floor) return std::nullopt;
  return std::pow(fit.amplitude / (epsilon - fit.floor), 1.0 / std::abs(fit.exponent));
}

/// Which hinge shapes detect_knee may use. A prior-to-data transition is a
/// plateau followed by decay; a curve running into a floor is the reverse.
enum class KneeOrientation { either, plateau_first, plateau_last };

struct KneeResult {
  bool found = false;
  double n_knee = 0.0;         // exp(breakpoint) when found
  double plateau_level = 0.0;  // exp(h)
  bool plateau_first = true;   // flat then sloped (false: sloped then flat)
  double slope = 0.0;          // slope of the sloped segment
  double single_slope = 0.0;   // slope of the one-line fit
  double rss_hinge = 0.0;
  double rss_line = 0.0;
};

/// Two-segment hinge fit in log-log space with one flat segment,
///   ln U = h + s * max(0, ln N - b)   (plateau first), or
///   ln U = h + s * min(0, ln N - b)   (plateau last),
/// with b, and the orientation unless one is requested, chosen to minimise
/// the residual. Reports no
/// knee when a single straight line is within 2% of the hinge residual.
inline KneeResult detect_knee(const ScalingCurve& curve, const FitOptions& opts = {},
                              KneeOrientation orientation = KneeOrientation::either) {
  const auto avg = detail::fold_average(curve, opts);
  detail::require_distinct(avg, 5);
  const std::size_t m = avg.n.size();
  std::vector<double> x(m), y(m);
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = std::log(avg.n[i]);
    y[i] = std::log(avg.value[i]);
  }
  struct HingeFit {
    double h, s, rss;
  };
  auto hinge = [&](double b, bool plateau_first) -> HingeFit {
    std::vector<double> z(m);
    bool any = false;
    for (std::size_t i = 0; i < m; ++i) {
      z[i] = plateau_first ? std::max(0.0, x[i] - b) : std::min(0.0, x[i] - b);
      any = any || z[i] != 0.0;
    }
    if (!any) {
      double mean = 0.0;
      for (double v : y) mean += v;
      mean /= static_cast<double>(m);
      double rss = 0.0;
      for (double v : y) rss += (v - mean) * (v - mean);
      return {mean, 0.0, rss};
    }
    const auto line = detail::ols(z, y);
    return {line.intercept, line.slope, line.rss};
  };

  // At least two points on the sloped side of the breakpoint.
  auto search = [&](bool plateau_first, double& best_b) {
    const double lo = plateau_first ? x.front() : x[1];
    const double hi = plateau_first ? x[m - 2] : x.back();
    constexpr int kGrid = 400;
    best_b = lo;
    HingeFit best = hinge(lo, plateau_first);
    for (int k = 1; k <= kGrid; ++k) {
      const double b = lo + (hi - lo) * k / kGrid;
      const HingeFit f = hinge(b, plateau_first);
      if (f.rss < best.rss) {
        best = f;
        best_b = b;
      }
    }
    const double step = (hi - lo) / kGrid;
    double a = std::max(lo, best_b - step);
    double c = std::min(hi, best_b + step);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 100 && c - a > 1e-12; ++it) {
      const double x1 = c - phi * (c - a);
      const double x2 = a + phi * (c - a);
      if (hinge(x1, plateau_first).rss < hinge(x2, plateau_first).rss) c = x2;
      else a = x1;
    }
    const double b = 0.5 * (a + c);
    const HingeFit f = hinge(b, plateau_first);
    if (f.rss < best.rss) {
      best = f;
      best_b = b;
    }
    return best;
  };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  double b_first = 0.0, b_last = 0.0;
  const HingeFit first =
      orientation == KneeOrientation::plateau_last ? HingeFit{0.0, 0.0, kInf} : search(true, b_first);
  const HingeFit last =
      orientation == KneeOrientation::plateau_first ? HingeFit{0.0, 0.0, kInf} : search(false, b_last);
  const bool use_first = first.rss <= last.rss;
  const HingeFit& best = use_first ? first : last;

  const auto line = detail::ols(x, y);
  KneeResult out;
  out.rss_hinge = best.rss;
  out.rss_line = line.rss;
  out.single_slope = line.slope;
  out.slope = best.s;
  out.plateau_first = use_first;
  out.plateau_level = std::exp(best.h);
  const double abs_tol = 1e-12 * static_cast<double>(m);
  out.found = line.rss > 1.02 * best.rss + abs_tol;
  out.n_knee = out.found ? std::exp(use_first ? b_first : b_last) : 0.0;
  return out;
}

/// JSON record for one fit.
inline nlohmann::ordered_json fit_record_json(const std::string& metric, const std::string& method, double lambda,
                                              const std::string& fit_kind, double n_min, const PowerLawFit& fit) {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["method"] = method;
  j["lambda"] = lambda;
  j["fit"] = fit_kind;
  j["n_min"] = n_min;
  j["a"] = fit.amplitude;
  j["gamma"] = fit.exponent;
  j["c"] = fit.floor;
  j["r2"] = fit.r2;
  j["gamma_stderr"] = fit.exponent_stderr;
  j["n_points"] = fit.n_points;
  j["clamped"] = fit.clamped;
  return j;
}

}  // namespace uqscale
