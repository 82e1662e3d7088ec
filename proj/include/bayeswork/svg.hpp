#pragma once

// Plain SVG plots. Coordinates are printed with two decimals so the same input always
// produces the same bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "bayeswork/checks.hpp"
#include "bayeswork/csv.hpp"

namespace bayeswork::svg {

inline constexpr const char* kLightBlue = "#9ecae1";
inline constexpr const char* kDarkBlue = "#08306b";
inline constexpr const char* kGrey = "#555555";
inline const std::vector<const char*> kChainColours = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                       "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

class PlotError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", std::abs(v) < 0.005 ? 0.0 : v);
  return buf;
}

inline std::string escape_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

/// Tick positions at 1, 2 or 5 times a power of ten.
inline std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) ticks.push_back(std::abs(t) < 1e-12 ? 0.0 : t);
  return ticks;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Plot area with linear data-to-pixel maps and the usual decorations.
class Canvas {
 public:
  Canvas(double width, double height, double x_lo, double x_hi, double y_lo, double y_hi, double left = 70.0)
      : width_(width), height_(height), left_(left), x_lo_(x_lo), x_hi_(x_hi), y_lo_(y_lo), y_hi_(y_hi) {
    if (!(x_hi_ > x_lo_)) x_hi_ = x_lo_ + 1.0;
    if (!(y_hi_ > y_lo_)) y_hi_ = y_lo_ + 1.0;
  }

  [[nodiscard]] double px(double x) const { return left_ + (x - x_lo_) / (x_hi_ - x_lo_) * (width_ - left_ - right_); }
  [[nodiscard]] double py(double y) const {
    return height_ - bottom_ - (y - y_lo_) / (y_hi_ - y_lo_) * (height_ - top_ - bottom_);
  }

  void polyline(const std::vector<double>& x, const std::vector<double>& y, const char* colour, double stroke,
                double opacity = 1.0) {
    body_ << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"" << fmt(stroke) << "\"";
    if (opacity < 1.0) body_ << " stroke-opacity=\"" << fmt(opacity) << "\"";
    body_ << " points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) body_ << (i ? " " : "") << fmt(px(x[i])) << ',' << fmt(py(y[i]));
    body_ << "\"/>\n";
  }

  void polygon(const std::vector<std::pair<double, double>>& pts, const char* fill, const char* stroke) {
    body_ << "<polygon fill=\"" << fill << "\" stroke=\"" << stroke << "\" stroke-width=\"1.00\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      body_ << (i ? " " : "") << fmt(px(pts[i].first)) << ',' << fmt(py(pts[i].second));
    body_ << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const char* colour, double stroke) {
    body_ << "<line x1=\"" << fmt(px(x1)) << "\" y1=\"" << fmt(py(y1)) << "\" x2=\"" << fmt(px(x2)) << "\" y2=\""
          << fmt(py(y2)) << "\" stroke=\"" << colour << "\" stroke-width=\"" << fmt(stroke) << "\"/>\n";
  }

  void dot(double x, double y, double r, const char* colour) {
    body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"" << fmt(r) << "\" fill=\"" << colour
          << "\"/>\n";
  }

  /// Text at data coordinates, shifted by (dx, dy) pixels.
  void text(double x, double y, const std::string& s, const char* anchor, double dx = 0.0, double dy = 0.0,
            int size = 11) {
    body_ << "<text x=\"" << fmt(px(x) + dx) << "\" y=\"" << fmt(py(y) + dy) << "\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\">" << escape_text(s) << "</text>\n";
  }

  void x_axis(const std::string& label) {
    line(x_lo_, y_lo_, x_hi_, y_lo_, kGrey, 1.0);
    for (double t : nice_ticks(x_lo_, x_hi_)) {
      text(t, y_lo_, tick_label(t), "middle", 0.0, 16.0, 10);
    }
    body_ << "<text x=\"" << fmt(0.5 * (left_ + width_ - right_)) << "\" y=\"" << fmt(height_ - 8.0)
          << "\" font-size=\"12\" text-anchor=\"middle\">" << escape_text(label) << "</text>\n";
  }

  void y_axis(const std::string& label, bool ticks = true) {
    line(x_lo_, y_lo_, x_lo_, y_hi_, kGrey, 1.0);
    if (ticks)
      for (double t : nice_ticks(y_lo_, y_hi_)) text(x_lo_, t, tick_label(t), "end", -6.0, 4.0, 10);
    body_ << "<text x=\"14.00\" y=\"" << fmt(0.5 * (top_ + height_ - bottom_))
          << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14.00 "
          << fmt(0.5 * (top_ + height_ - bottom_)) << ")\">" << escape_text(label) << "</text>\n";
  }

  void title(const std::string& s) {
    body_ << "<text x=\"" << fmt(0.5 * width_) << "\" y=\"20.00\" font-size=\"14\" text-anchor=\"middle\">"
          << escape_text(s) << "</text>\n";
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width_) << "\" height=\"" << fmt(height_)
        << "\" viewBox=\"0 0 " << fmt(width_) << ' ' << fmt(height_) << "\" font-family=\"sans-serif\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double width_, height_, left_;
  double right_ = 20.0, top_ = 30.0, bottom_ = 45.0;
  double x_lo_, x_hi_, y_lo_, y_hi_;
  std::ostringstream body_;
};

/// Predictive check overlay: thin light curves per simulation, thick dark observed curve.
inline std::string density_overlay(const DensityCurves& c, const std::string& title) {
  if (c.grid.empty() || (c.simulated.empty() && c.observed.empty())) throw PlotError("empty ensemble");
  double y_hi = 0.0;
  for (const auto& s : c.simulated) y_hi = std::max(y_hi, *std::max_element(s.begin(), s.end()));
  if (!c.observed.empty()) y_hi = std::max(y_hi, *std::max_element(c.observed.begin(), c.observed.end()));
  Canvas cv(640, 400, c.grid.front(), c.grid.back(), 0.0, 1.05 * y_hi);
  cv.title(title);
  for (const auto& s : c.simulated) cv.polyline(c.grid, s, kLightBlue, 0.6, 0.7);
  if (!c.observed.empty()) cv.polyline(c.grid, c.observed, kDarkBlue, 2.5);
  cv.x_axis("log10(1 + bugs)");
  cv.y_axis("density", false);
  return cv.str();
}

/// Horizontal violins on a log10(1 + count) axis, drawn in the given order (top first).
inline std::string violins(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& quantiles,
                           const std::string& title) {
  if (labels.empty() || labels.size() != quantiles.size()) throw PlotError("empty violin table");
  double x_hi = 0.0;
  for (const auto& q : quantiles) x_hi = std::max(x_hi, std::log10(1.0 + std::max(0.0, q.back())));
  const double n = static_cast<double>(labels.size());
  Canvas cv(640, 60 + 36 * n, 0.0, std::max(1.0, x_hi * 1.05), 0.0, n, 110.0);
  cv.title(title);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto& q = quantiles[k];
    if (q.size() < 3) throw PlotError("violin needs at least three quantiles");
    const double centre = n - static_cast<double>(k) - 0.5;
    // Density from quantile spacing, on the log axis.
    std::vector<double> x, w;
    for (double v : q) x.push_back(std::log10(1.0 + std::max(0.0, v)));
    double w_max = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t a = i == 0 ? 0 : i - 1, b = std::min(i + 1, x.size() - 1);
      const double span = x[b] - x[a];
      w.push_back(span > 1e-9 ? static_cast<double>(b - a) / span : 0.0);
    }
    for (double v : w) w_max = std::max(w_max, v);
    if (!(w_max > 0.0)) w_max = 1.0;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < x.size(); ++i) pts.emplace_back(x[i], centre + 0.42 * std::max(w[i] / w_max, 0.03));
    for (std::size_t i = x.size(); i-- > 0;) pts.emplace_back(x[i], centre - 0.42 * std::max(w[i] / w_max, 0.03));
    cv.polygon(pts, kLightBlue, kDarkBlue);
    cv.dot(x[x.size() / 2], centre, 3.0, kDarkBlue);
    cv.text(0.0, centre, labels[k], "end", -8.0, 4.0, 11);
  }
  cv.x_axis("log10(1 + bugs)");
  return cv.str();
}

struct IntervalMark {
  std::string label;
  double low, mid, high;
};

/// Dot-and-whisker plot, one row per interval, with a reference line at zero when in range.
inline std::string intervals(const std::vector<IntervalMark>& rows, const std::string& title,
                             const std::string& x_label = "value") {
  if (rows.empty()) throw PlotError("empty interval table");
  double lo = kInf, hi = -kInf;
  for (const auto& r : rows) {
    lo = std::min(lo, r.low);
    hi = std::max(hi, r.high);
  }
  const double pad = 0.05 * std::max(hi - lo, 1e-9);
  const double n = static_cast<double>(rows.size());
  Canvas cv(640, 60 + 28 * n, lo - pad, hi + pad, 0.0, n, 170.0);
  cv.title(title);
  if (lo - pad < 0.0 && hi + pad > 0.0) cv.line(0.0, 0.0, 0.0, n, "#bbbbbb", 1.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double y = n - static_cast<double>(k) - 0.5;
    cv.line(rows[k].low, y, rows[k].high, y, kDarkBlue, 2.0);
    cv.dot(rows[k].mid, y, 4.0, kDarkBlue);
    cv.text(lo - pad, y, rows[k].label, "end", -8.0, 4.0, 11);
  }
  cv.x_axis(x_label);
  return cv.str();
}

/// Trace of one coordinate, one series per chain.
inline std::string trace(const std::vector<std::vector<double>>& chains, const std::string& name) {
  if (chains.empty() || chains.front().empty()) throw PlotError("empty trace");
  double lo = kInf, hi = -kInf;
  for (const auto& c : chains)
    for (double v : c) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double pad = 0.05 * std::max(hi - lo, 1e-9);
  Canvas cv(640, 300, 1.0, static_cast<double>(chains.front().size()), lo - pad, hi + pad);
  cv.title("trace: " + name);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    std::vector<double> x(chains[c].size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i + 1);
    cv.polyline(x, chains[c], kChainColours[c % kChainColours.size()], 0.8, 0.8);
  }
  cv.x_axis("iteration");
  cv.y_axis(name);
  return cv.str();
}

/// Mean curve with a shaded 95% band.
inline std::string band(const std::vector<double>& x, const std::vector<double>& mid, const std::vector<double>& low,
                        const std::vector<double>& high, const std::string& title, const std::string& x_label,
                        const std::string& y_label) {
  if (x.empty()) throw PlotError("empty curve");
  const double y_hi = *std::max_element(high.begin(), high.end());
  const double y_lo = std::min(0.0, *std::min_element(low.begin(), low.end()));
  Canvas cv(640, 400, x.front(), x.back(), y_lo, 1.05 * y_hi);
  cv.title(title);
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < x.size(); ++i) pts.emplace_back(x[i], high[i]);
  for (std::size_t i = x.size(); i-- > 0;) pts.emplace_back(x[i], low[i]);
  cv.polygon(pts, kLightBlue, kLightBlue);
  cv.polyline(x, mid, kDarkBlue, 2.0);
  cv.x_axis(x_label);
  cv.y_axis(y_label);
  return cv.str();
}

/// Two densities on a shared grid (prior dashed-light, posterior dark).
inline std::string prior_posterior(const std::vector<double>& grid, const std::vector<double>& prior,
                                   const std::vector<double>& posterior, const std::string& title,
                                   const std::string& x_label) {
  if (grid.empty()) throw PlotError("empty curve");
  double y_hi = 0.0;
  for (double v : prior) y_hi = std::max(y_hi, std::isfinite(v) ? v : 0.0);
  for (double v : posterior) y_hi = std::max(y_hi, v);
  Canvas cv(640, 400, grid.front(), grid.back(), 0.0, 1.05 * y_hi);
  cv.title(title);
  std::vector<double> capped;
  for (double v : prior) capped.push_back(std::isfinite(v) ? v : y_hi);
  cv.polyline(grid, capped, kLightBlue, 2.0);
  cv.polyline(grid, posterior, kDarkBlue, 2.0);
  cv.x_axis(x_label);
  cv.y_axis("density", false);
  return cv.str();
}

}  // namespace bayeswork::svg
