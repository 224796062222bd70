#pragma once

#include <string>
#include <vector>

namespace milens {

// Deterministic line plots: same input, byte-identical SVG.
struct PlotSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> band_lo;  // optional min-max band, same length as xs
  std::vector<double> band_hi;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<std::pair<std::string, double>> hlines;  // dashed reference lines
  bool log_y = false;
};

std::string render_svg_plot(const PlotSpec& spec);

}  // namespace milens
