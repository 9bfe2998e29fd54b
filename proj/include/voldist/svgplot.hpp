#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "voldist/errors.hpp"

namespace voldist {

// Minimal deterministic SVG line charts for report plots. Output depends
// only on the input series, so re-emission is byte-identical.
struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string fmt_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline void write_line_plot(const std::string& path, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::vector<PlotSeries>& series) {
  if (series.empty()) throw ContractError("write_line_plot: no series");
  for (const auto& s : series) {
    if (s.points.empty()) throw ContractError("write_line_plot: series '" + s.label + "' empty");
  }

  double x_min = series[0].points[0].first, x_max = x_min;
  double y_min = series[0].points[0].second, y_max = y_min;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (x_max == x_min) {
    x_min -= 0.5;
    x_max += 0.5;
  }
  if (y_max == y_min) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const double width = 640, height = 420;
  const double left = 72, right = 24, top = 40, bottom = 48;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
  auto sy = [&](double y) { return top + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  constexpr std::size_t kPaletteSize = 8;

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_line_plot: cannot open '" + path + "'");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
     << " font-size=\"15\">" << detail::xml_escape(title) << "</text>\n";

  const int ticks = 5;
  os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int i = 0; i <= ticks; ++i) {
    const double fx = x_min + (x_max - x_min) * i / ticks;
    const double fy = y_min + (y_max - y_min) * i / ticks;
    const double px = sx(fx);
    const double py = sy(fy);
    os << "<line x1=\"" << detail::fmt_num(px) << "\" y1=\"" << top << "\" x2=\""
       << detail::fmt_num(px) << "\" y2=\"" << top + plot_h
       << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << detail::fmt_num(py) << "\" x2=\"" << left + plot_w
       << "\" y2=\"" << detail::fmt_num(py) << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << detail::fmt_num(px) << "\" y=\"" << top + plot_h + 16
       << "\" text-anchor=\"middle\">" << detail::fmt_num(fx) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt_num(py + 4)
       << "\" text-anchor=\"end\">" << detail::fmt_num(fy) << "</text>\n";
  }
  os << "</g>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\""
     << plot_h << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
     << detail::xml_escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << top + plot_h / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
     << top + plot_h / 2 << ")\">" << detail::xml_escape(y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % kPaletteSize];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < series[si].points.size(); ++i) {
      if (i) os << ' ';
      os << detail::fmt_num(sx(series[si].points[i].first)) << ','
         << detail::fmt_num(sy(series[si].points[i].second));
    }
    os << "\"/>\n";
    for (const auto& [x, y] : series[si].points) {
      os << "<circle cx=\"" << detail::fmt_num(sx(x)) << "\" cy=\"" << detail::fmt_num(sy(y))
         << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }
  }

  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ly = top + 14 + 16 * static_cast<double>(si);
    const char* color = kPalette[si % kPaletteSize];
    os << "<line x1=\"" << left + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + 34
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + 40 << "\" y=\"" << ly << "\">"
       << detail::xml_escape(series[si].label) << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  os.flush();
  if (!os) throw IoError("write_line_plot: write to '" + path + "' failed");
}

}  // namespace voldist
