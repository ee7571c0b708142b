#include "mice/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "mice/json_io.hpp"

namespace mice {
namespace {

constexpr double kW = 860.0;
constexpr double kH = 520.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 30.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

const char* kColors[] = {"#1f6fb2", "#c4452c", "#3a8f3f", "#7a4fa0", "#b58a00", "#4f5d66"};

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  auto grow = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    if (first) {
      xmin = xmax = x;
      ymin = ymax = y;
      first = false;
    } else {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  };
  for (const auto& s : spec.series) {
    if (s.xs.size() != s.ys.size()) throw std::invalid_argument("plot series length mismatch");
    if (!s.band_lo.empty() &&
        (s.band_lo.size() != s.xs.size() || s.band_hi.size() != s.xs.size())) {
      throw std::invalid_argument("plot band length mismatch");
    }
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      grow(s.xs[i], s.ys[i]);
      if (!s.band_lo.empty()) {
        grow(s.xs[i], s.band_lo[i]);
        grow(s.xs[i], s.band_hi[i]);
      }
    }
  }
  if (spec.hline) grow(xmin, *spec.hline);
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * plot_w; };
  auto py = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
  out << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">"
      << escape(spec.title) << "</text>\n";

  // Axes and ticks.
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    out << "<line x1=\"" << fmt(px(xv)) << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << fmt(px(xv))
        << "\" y2=\"" << kTop + plot_h + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << kTop + plot_h + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(xv)
        << "</text>\n";
    out << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << fmt(py(yv)) << "\" x2=\"" << kLeft
        << "\" y2=\"" << fmt(py(yv)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << fmt(py(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << escape(spec.x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << kTop + plot_h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 18 "
      << kTop + plot_h / 2 << ")\">" << escape(spec.y_label) << "</text>\n";

  int color_idx = 0;
  double legend_y = kTop + 14;
  for (const auto& s : spec.series) {
    const char* color = kColors[color_idx % 6];
    if (!s.band_lo.empty() && s.xs.size() > 1) {
      out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.xs.size(); ++i) {
        out << fmt(px(s.xs[i])) << "," << fmt(py(s.band_hi[i])) << " ";
      }
      for (std::size_t i = s.xs.size(); i-- > 0;) {
        out << fmt(px(s.xs[i])) << "," << fmt(py(s.band_lo[i])) << " ";
      }
      out << "\"/>\n";
    }
    if (s.xs.size() == 1) {
      out << "<circle cx=\"" << fmt(px(s.xs[0])) << "\" cy=\"" << fmt(py(s.ys[0]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    } else if (!s.xs.empty()) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
      for (std::size_t i = 0; i < s.xs.size(); ++i) {
        out << fmt(px(s.xs[i])) << "," << fmt(py(s.ys[i])) << " ";
      }
      out << "\"/>\n";
    }
    out << "<rect x=\"" << kLeft + plot_w - 150 << "\" y=\"" << legend_y - 9
        << "\" width=\"14\" height=\"4\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << kLeft + plot_w - 132 << "\" y=\"" << legend_y
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.name) << "</text>\n";
    legend_y += 16;
    ++color_idx;
  }
  if (spec.hline) {
    out << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(py(*spec.hline)) << "\" x2=\""
        << kLeft + plot_w << "\" y2=\"" << fmt(py(*spec.hline))
        << "\" stroke=\"#555555\" stroke-dasharray=\"6,4\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_svg(const std::string& path, const PlotSpec& spec) {
  write_text_file(path, render_svg(spec));
}

}  // namespace mice
