#pragma once

// Minimal SVG charts for the optional --plot outputs.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace prd::plots {

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline void write(const std::filesystem::path& path, const std::string& body, int w, int h) {
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << body << "</svg>\n";
}

}  // namespace detail

/// Line chart of one or more series sharing the x axis (step numbers from 1).
inline void loss_curve(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const int w = 720, h = 400, left = 60, right = 20, top = 30, bottom = 40;
  std::size_t n = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, ys] : series) {
    n = std::max(n, ys.size());
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (n < 2 || !(hi > lo)) {
    lo = 0;
    hi = std::max(hi, 1.0);
    n = std::max<std::size_t>(n, 2);
  }
  auto px = [&](double i) { return left + (w - left - right) * i / static_cast<double>(n - 1); };
  auto py = [&](double y) { return top + (h - top - bottom) * (hi - y) / (hi - lo); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::string body;
  body += "<text x=\"" + std::to_string(left) + "\" y=\"18\">training loss (BCE)</text>\n";
  body += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(h - bottom) + "\" x2=\"" +
          std::to_string(w - right) + "\" y2=\"" + std::to_string(h - bottom) + "\" stroke=\"black\"/>\n";
  body += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top) + "\" x2=\"" + std::to_string(left) +
          "\" y2=\"" + std::to_string(h - bottom) + "\" stroke=\"black\"/>\n";
  body += "<text x=\"4\" y=\"" + detail::num(py(hi) + 4) + "\">" + detail::num(hi) + "</text>\n";
  body += "<text x=\"4\" y=\"" + detail::num(py(lo) + 4) + "\">" + detail::num(lo) + "</text>\n";
  body += "<text x=\"" + std::to_string(w - right - 60) + "\" y=\"" + std::to_string(h - 12) + "\">step " +
          std::to_string(n) + "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ys = series[s].second;
    std::string pts;
    const std::size_t stride = std::max<std::size_t>(1, ys.size() / 1000);
    for (std::size_t i = 0; i < ys.size(); i += stride) pts += detail::num(px(static_cast<double>(i))) + "," + detail::num(py(ys[i])) + " ";
    body += "<polyline fill=\"none\" stroke=\"" + std::string(colors[s % 4]) + "\" points=\"" + pts + "\"/>\n";
    body += "<text x=\"" + std::to_string(w - right - 150) + "\" y=\"" + std::to_string(top + 14 * static_cast<int>(s)) +
            "\" fill=\"" + colors[s % 4] + "\">" + series[s].first + "</text>\n";
  }
  detail::write(path, body, w, h);
}

/// Bar chart of accuracy per configuration (fractions in [0,1]).
inline void accuracy_bars(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& bars) {
  const int w = 720, h = 400, left = 50, bottom = 60, top = 30;
  const double slot = bars.empty() ? 1.0 : static_cast<double>(w - left - 20) / static_cast<double>(bars.size());
  std::string body = "<text x=\"" + std::to_string(left) + "\" y=\"18\">accuracy by configuration</text>\n";
  const double base = h - bottom, span = h - bottom - top;
  body += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + detail::num(base - span * 0.125) + "\" x2=\"" +
          std::to_string(w - 20) + "\" y2=\"" + detail::num(base - span * 0.125) +
          "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x = left + slot * static_cast<double>(i) + slot * 0.15;
    const double bh = span * std::clamp(bars[i].second, 0.0, 1.0);
    body += "<rect x=\"" + detail::num(x) + "\" y=\"" + detail::num(base - bh) + "\" width=\"" + detail::num(slot * 0.7) +
            "\" height=\"" + detail::num(bh) + "\" fill=\"#1f77b4\"/>\n";
    body += "<text x=\"" + detail::num(x) + "\" y=\"" + detail::num(base - bh - 4) + "\">" +
            detail::num(100 * bars[i].second) + "</text>\n";
    body += "<text x=\"" + detail::num(x) + "\" y=\"" + detail::num(base + 16) + "\">" + bars[i].first + "</text>\n";
  }
  detail::write(path, body, w, h);
}

}  // namespace prd::plots
