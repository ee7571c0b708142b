#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mice {

// Minimal deterministic SVG line plots; no external assets, byte-stable
// output for fixed input.
struct PlotSeries {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> band_lo;  // optional shaded band (same length as xs)
  std::vector<double> band_hi;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::optional<double> hline;  // dashed horizontal rule (e.g. cost budget)
};

std::string render_svg(const PlotSpec& spec);
void write_svg(const std::string& path, const PlotSpec& spec);

}  // namespace mice
