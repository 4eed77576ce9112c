#pragma once

// Self-contained SVG figures: bifurcation diagrams, vector fields, time
// series and loss curves. Output uses only inline styling and no fonts or
// assets beyond generic font families.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bifurnode/bifurcation.hpp"
#include "bifurnode/dynsys.hpp"
#include "bifurnode/io.hpp"
#include "bifurnode/training.hpp"

namespace bifurnode::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool markers = false;  // dots instead of a polyline
  double width = 1.5;
};

struct Arrow {
  double x0, y0, x1, y1;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<std::pair<double, double>> x_range;
  std::optional<std::pair<double, double>> y_range;
  bool log_y = false;
  double width = 640;
  double height = 420;
};

inline std::string escape(std::string_view s) {
  std::string out;
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

class Canvas {
 public:
  explicit Canvas(Axes axes) : ax_(std::move(axes)) {}

  void add(Series s) { series_.push_back(std::move(s)); }
  void add_arrows(std::vector<Arrow> arrows, std::string color = "#444444") {
    arrows_ = std::move(arrows);
    arrow_color_ = std::move(color);
  }

  std::string render() const {
    auto [xlo, xhi] = range(true);
    auto [ylo, yhi] = range(false);
    const double left = 70, right = 20, top = 36, bottom = 52;
    const double pw = ax_.width - left - right, ph = ax_.height - top - bottom;
    const auto fy = [&](double y) { return ax_.log_y ? std::log10(std::max(y, 1e-300)) : y; };
    const double ylo_t = fy(ylo), yhi_t = fy(yhi);
    const auto px = [&](double x) { return left + (x - xlo) / (xhi - xlo) * pw; };
    const auto py = [&](double y) { return top + ph - (fy(y) - ylo_t) / (yhi_t - ylo_t) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(ax_.width) << "\" height=\"" << num(ax_.height)
       << "\" viewBox=\"0 0 " << num(ax_.width) << ' ' << num(ax_.height) << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<defs><clipPath id=\"plot\"><rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw)
       << "\" height=\"" << num(ph) << "\"/></clipPath>"
       << "<marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\">"
       << "<path d=\"M0,0 L6,3 L0,6 z\" fill=\"" << arrow_color_ << "\"/></marker></defs>\n";
    os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
       << "\" fill=\"none\" stroke=\"black\"/>\n";

    for (int i = 0; i <= 5; ++i) {
      const double xv = xlo + (xhi - xlo) * i / 5.0;
      const double X = px(xv);
      os << "<line x1=\"" << num(X) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(X) << "\" y2=\""
         << num(top + ph + 5) << "\" stroke=\"black\"/>";
      os << "<text x=\"" << num(X) << "\" y=\"" << num(top + ph + 18)
         << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << tick_label(xv) << "</text>\n";
      const double yt = ylo_t + (yhi_t - ylo_t) * i / 5.0;
      const double yv = ax_.log_y ? std::pow(10.0, yt) : yt;
      const double Y = top + ph - (yt - ylo_t) / (yhi_t - ylo_t) * ph;
      os << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(Y) << "\" x2=\"" << num(left) << "\" y2=\"" << num(Y)
         << "\" stroke=\"black\"/>";
      os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(Y + 4)
         << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << tick_label(yv) << "</text>\n";
    }
    os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(ax_.height - 12)
       << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" << escape(ax_.x_label)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << num(top + ph / 2) << "\" font-family=\"sans-serif\" font-size=\"13\" "
       << "text-anchor=\"middle\" transform=\"rotate(-90 16 " << num(top + ph / 2) << ")\">" << escape(ax_.y_label)
       << "</text>\n";
    os << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" "
       << "text-anchor=\"middle\">" << escape(ax_.title) << "</text>\n";

    os << "<g clip-path=\"url(#plot)\">\n";
    for (const auto &a : arrows_) {
      os << "<line x1=\"" << num(px(a.x0)) << "\" y1=\"" << num(py(a.y0)) << "\" x2=\"" << num(px(a.x1))
         << "\" y2=\"" << num(py(a.y1)) << "\" stroke=\"" << arrow_color_
         << "\" stroke-width=\"1\" marker-end=\"url(#head)\"/>\n";
    }
    for (const auto &s : series_) {
      if (s.markers) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
          os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"" << num(s.width)
             << "\" fill=\"" << s.color << "\"/>";
        }
        os << '\n';
      } else {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << num(s.width) << "\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
          os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        }
        os << "\"/>\n";
      }
    }
    os << "</g>\n";

    double ly = top + 14;
    for (const auto &s : series_) {
      if (s.label.empty()) continue;
      os << "<rect x=\"" << num(left + pw - 150) << "\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
         << s.color << "\"/><text x=\"" << num(left + pw - 135) << "\" y=\"" << num(ly + 1)
         << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(s.label) << "</text>\n";
      ly += 15;
    }
    os << "</svg>\n";
    return os.str();
  }

 private:
  std::pair<double, double> range(bool x_axis) const {
    const auto &fixed = x_axis ? ax_.x_range : ax_.y_range;
    if (fixed) return *fixed;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto &s : series_) {
      for (double v : x_axis ? s.x : s.y) {
        if (!std::isfinite(v) || (!x_axis && ax_.log_y && v <= 0.0)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    for (const auto &a : arrows_) {
      lo = std::min({lo, x_axis ? a.x0 : a.y0, x_axis ? a.x1 : a.y1});
      hi = std::max({hi, x_axis ? a.x0 : a.y0, x_axis ? a.x1 : a.y1});
    }
    if (!std::isfinite(lo)) return {0.0, 1.0};
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    if (!(x_axis || ax_.log_y)) {
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    }
    return {lo, hi};
  }

  Axes ax_;
  std::vector<Series> series_;
  std::vector<Arrow> arrows_;
  std::string arrow_color_ = "#444444";
};

inline const char *kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

// Min and max curves of x for the given initial condition. The first diagram
// is drawn in black (reference), the second in blue, the rest in grey.
inline std::string bifurcation_plot(std::span<const BifurcationDiagram> diagrams, const StateVector &ic = kReferenceIc,
                                    std::string title = "Bifurcation diagram") {
  Axes ax;
  ax.title = std::move(title);
  ax.x_label = "alpha";
  ax.y_label = "x (long-run min / max)";
  ax.x_range = {kAlphaLow, kAlphaHigh};
  Canvas c(ax);
  for (std::size_t d = diagrams.size(); d-- > 0;) {
    const auto &row = diagrams[d].row(ic);
    const char *color = d == 0 ? "#000000" : d == 1 ? "#1f77b4" : "#aaaaaa";
    Series lo, hi;
    lo.color = hi.color = color;
    lo.markers = hi.markers = true;
    lo.width = hi.width = d == 0 ? 1.6 : 1.2;
    for (std::size_t k = 0; k < row.size(); ++k) {
      lo.x.push_back(diagrams[d].alphas[k]);
      hi.x.push_back(diagrams[d].alphas[k]);
      lo.y.push_back(row[k].x_min);
      hi.y.push_back(row[k].x_max);
    }
    if (d <= 1) hi.label = diagrams[d].field_id.empty() ? (d == 0 ? "reference" : "model") : diagrams[d].field_id;
    c.add(std::move(lo));
    c.add(std::move(hi));
  }
  return c.render();
}

struct FieldSample {
  double x, y, dx, dy;
};

// Field on an n x n grid over [0, x_max] x [0, y_max], endpoints included.
template <class Field>
std::vector<FieldSample> sample_field(const Field &field, double alpha, std::size_t n = 20, double x_max = 1.2,
                                      double y_max = 3.0) {
  std::vector<FieldSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = x_max * static_cast<double>(i) / static_cast<double>(n - 1);
      const double y = y_max * static_cast<double>(j) / static_cast<double>(n - 1);
      const auto d = field(StateVector{x, y}, alpha);
      out.push_back({x, y, d.x, d.y});
    }
  }
  return out;
}

inline void write_field_csv(std::ostream &os, double alpha, std::span<const FieldSample> samples) {
  os << "alpha,x,y,dx,dy\n";
  for (const auto &s : samples)
    os << io::fmt_double(alpha) << ',' << io::fmt_double(s.x) << ',' << io::fmt_double(s.y) << ','
       << io::fmt_double(s.dx) << ',' << io::fmt_double(s.dy) << '\n';
}

// Arrows are direction-only (equal length); an optional trajectory is
// overlaid.
inline std::string vector_field_plot(std::span<const FieldSample> samples, double alpha,
                                     std::span<const StateVector> trajectory = {}, double x_max = 1.2,
                                     double y_max = 3.0, std::string title = {}) {
  Axes ax;
  ax.title = title.empty() ? "Vector field, alpha = " + tick_label(alpha) : std::move(title);
  ax.x_label = "x (prey)";
  ax.y_label = "y (predator)";
  ax.x_range = {0.0, x_max};
  ax.y_range = {0.0, y_max};
  ax.width = 520;
  ax.height = 520;
  Canvas c(ax);
  const double n = std::sqrt(static_cast<double>(samples.size()));
  const double sx = 0.4 * x_max / n, sy = 0.4 * y_max / n;
  std::vector<Arrow> arrows;
  for (const auto &s : samples) {
    const double u = s.dx / x_max, v = s.dy / y_max;
    const double len = std::hypot(u, v);
    if (!(len > 0.0) || !std::isfinite(len)) continue;
    arrows.push_back({s.x - sx * u / len, s.y - sy * v / len, s.x + sx * u / len, s.y + sy * v / len});
  }
  c.add_arrows(std::move(arrows));
  if (!trajectory.empty()) {
    Series t;
    t.color = "#1f77b4";
    t.width = 2.0;
    t.label = "trajectory";
    for (const auto &z : trajectory) {
      t.x.push_back(z.x);
      t.y.push_back(z.y);
    }
    c.add(std::move(t));
  }
  return c.render();
}

inline std::string timeseries_plot(std::span<const Trajectory> series, std::string title = "Time series") {
  Axes ax;
  ax.title = std::move(title);
  ax.x_label = "t";
  ax.y_label = "population";
  Canvas c(ax);
  std::size_t k = 0;
  for (const auto &tr : series) {
    Series sx, sy;
    sx.x = sy.x = tr.times;
    for (const auto &z : tr.states) {
      sx.y.push_back(z.x);
      sy.y.push_back(z.y);
    }
    sx.color = kPalette[(2 * k) % 6];
    sy.color = kPalette[(2 * k + 1) % 6];
    const std::string tag = "a=" + tick_label(tr.alpha) + " ic=(" + tick_label(tr.initial_condition.x) + "," +
                            tick_label(tr.initial_condition.y) + ")";
    sx.label = "x " + tag;
    sy.label = "y " + tag;
    sx.markers = sy.markers = tr.noise_sigma > 0.0;
    c.add(std::move(sx));
    c.add(std::move(sy));
    ++k;
  }
  return c.render();
}

inline std::string loss_plot(std::span<const LossRecord> history, std::string title = "Training loss") {
  Axes ax;
  ax.title = std::move(title);
  ax.x_label = "epoch";
  ax.y_label = "loss";
  ax.log_y = true;
  Canvas c(ax);
  Series total, data, phys;
  total.label = "total";
  data.label = "data MAE";
  phys.label = "physics term";
  total.color = "#000000";
  data.color = "#1f77b4";
  phys.color = "#d62728";
  total.width = data.width = phys.width = 1.0;
  for (const auto &r : history) {
    const double e = static_cast<double>(r.epoch);
    total.x.push_back(e);
    data.x.push_back(e);
    phys.x.push_back(e);
    total.y.push_back(r.loss.total);
    data.y.push_back(r.loss.data_mae);
    phys.y.push_back(r.loss.physics_term);
  }
  c.add(std::move(phys));
  c.add(std::move(data));
  c.add(std::move(total));
  return c.render();
}

inline void write_text(const std::filesystem::path &p, const std::string &text) {
  auto os = io::open_out(p);
  os << text;
}

}  // namespace bifurnode::svg
