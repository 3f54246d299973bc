#pragma once

// Minimal static log-log plot writer.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace uqscale {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  // Optional fitted power law drawn dashed: y = a x^gamma + c.
  bool has_fit = false;
  double a = 0.0, gamma = 0.0, c = 0.0;
};

namespace detail {
inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace detail

inline std::string render_loglog_svg(const std::string& title, const std::vector<PlotSeries>& series) {
  constexpr double kW = 720, kH = 480, kLeft = 70, kRight = 220, kTop = 40, kBottom = 50;
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0.0 && s.y[i] > 0.0)) continue;
      xmin = std::min(xmin, std::log10(s.x[i]));
      xmax = std::max(xmax, std::log10(s.x[i]));
      ymin = std::min(ymin, std::log10(s.y[i]));
      ymax = std::max(ymax, std::log10(s.y[i]));
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-9) xmax = xmin + 1;
  if (ymax - ymin < 1e-9) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double lx) { return kLeft + (lx - xmin) / (xmax - xmin) * (kW - kLeft - kRight); };
  auto py = [&](double ly) { return kH - kBottom - (ly - ymin) / (ymax - ymin) * (kH - kTop - kBottom); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight << "\" height=\""
     << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int d = static_cast<int>(std::ceil(xmin)); d <= static_cast<int>(std::floor(xmax)); ++d)
    os << "<text x=\"" << detail::fmt_num(px(d)) << "\" y=\"" << kH - kBottom + 18
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">1e" << d << "</text>\n";
  for (int d = static_cast<int>(std::ceil(ymin)); d <= static_cast<int>(std::floor(ymax)); ++d)
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << detail::fmt_num(py(d) + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e" << d << "</text>\n";
  os << "<text x=\"" << (kW - kRight + kLeft) / 2 << "\" y=\"" << kH - 12
     << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">N</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 10];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0.0 && s.y[i] > 0.0)) continue;
      os << "<circle cx=\"" << detail::fmt_num(px(std::log10(s.x[i]))) << "\" cy=\""
         << detail::fmt_num(py(std::log10(s.y[i]))) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    if (s.has_fit) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-dasharray=\"6,4\" points=\"";
      for (int i = 0; i <= 40; ++i) {
        const double lx = xmin + (xmax - xmin) * i / 40.0;
        const double y = s.a * std::pow(10.0, s.gamma * lx) + s.c;
        if (!(y > 0.0)) continue;
        const double ly = std::clamp(std::log10(y), ymin, ymax);
        os << detail::fmt_num(px(lx)) << ',' << detail::fmt_num(py(ly)) << ' ';
      }
      os << "\"/>\n";
    }
    const double ly = kTop + 14 + 16.0 * static_cast<double>(k);
    os << "<circle cx=\"" << kW - kRight + 14 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << kW - kRight + 24 << "\" y=\"" << ly
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace uqscale
