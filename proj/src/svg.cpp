#include "milens/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "milens/error.hpp"

namespace milens {

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 690, kTop = 46, kBottom = 420;

const char* kPalette[8] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Scale {
  double lo, hi;
  double a, b;  // pixel = a * value + b
  double map(double v) const { return a * v + b; }
};

Scale make_scale(double lo, double hi, double pix_lo, double pix_hi) {
  if (hi <= lo) hi = lo + 1.0;
  const double a = (pix_hi - pix_lo) / (hi - lo);
  return {lo, hi, a, pix_lo - a * lo};
}

std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  const double span = hi - lo;
  if (span <= 0) return {lo};
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12 * span; t += step)
    ticks.push_back(std::fabs(t) < step * 1e-9 ? 0.0 : t);
  return ticks;
}

}  // namespace

std::string render_svg_plot(const PlotSpec& spec) {
  if (spec.series.empty()) throw Error("render_svg_plot: no series");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : spec.series) {
    for (double x : s.xs) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    auto scan = [&](const std::vector<double>& vals) {
      for (double y : vals)
        if (std::isfinite(y)) {
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
    };
    scan(s.ys);
    scan(s.band_lo);
    scan(s.band_hi);
  }
  for (const auto& [label, y] : spec.hlines) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (!std::isfinite(ymin)) {
    ymin = 0;
    ymax = 1;
  }
  const double pad = 0.05 * (ymax - ymin + 1e-12);
  const Scale sx = make_scale(xmin, xmax, kLeft, kRight);
  const Scale sy = make_scale(ymin - pad, ymax + pad, kBottom, kTop);

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" +
         fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt((kLeft + kRight) / 2) + "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">" + spec.title + "</text>\n";

  for (double t : nice_ticks(sx.lo, sx.hi)) {
    const double px = sx.map(t);
    out += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(kBottom) + "\" x2=\"" + fmt(px) +
           "\" y2=\"" + fmt(kTop) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(kBottom + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(t) +
           "</text>\n";
  }
  for (double t : nice_ticks(sy.lo, sy.hi)) {
    const double py = sy.map(t);
    out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(kRight) +
           "\" y2=\"" + fmt(py) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(kLeft - 8) + "\" y=\"" + fmt(py + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(t) +
           "</text>\n";
  }
  out += "<text x=\"" + fmt((kLeft + kRight) / 2) + "\" y=\"" + fmt(kHeight - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + spec.x_label +
         "</text>\n";
  out += "<text x=\"20\" y=\"" + fmt((kTop + kBottom) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 20 " +
         fmt((kTop + kBottom) / 2) + ")\">" + spec.y_label + "</text>\n";

  size_t color = 0;
  for (const auto& [label, y] : spec.hlines) {
    const double py = sy.map(y);
    out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(kRight) +
           "\" y2=\"" + fmt(py) + "\" stroke=\"#444444\" stroke-width=\"1.2\" "
           "stroke-dasharray=\"6 4\"/>\n";
    out += "<text x=\"" + fmt(kRight - 4) + "\" y=\"" + fmt(py - 5) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444444\">" +
           label + "</text>\n";
  }

  for (const auto& s : spec.series) {
    const char* stroke = kPalette[color % 8];
    if (!s.band_lo.empty() && s.band_lo.size() == s.xs.size() &&
        s.band_hi.size() == s.xs.size()) {
      std::string points;
      for (size_t i = 0; i < s.xs.size(); ++i)
        points += fmt(sx.map(s.xs[i])) + "," + fmt(sy.map(s.band_hi[i])) + " ";
      for (size_t i = s.xs.size(); i-- > 0;)
        points += fmt(sx.map(s.xs[i])) + "," + fmt(sy.map(s.band_lo[i])) + " ";
      out += "<polygon points=\"" + points + "\" fill=\"" + stroke +
             "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    std::string points;
    for (size_t i = 0; i < s.xs.size(); ++i)
      points += fmt(sx.map(s.xs[i])) + "," + fmt(sy.map(s.ys[i])) + " ";
    out += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + std::string(stroke) +
           "\" stroke-width=\"1.8\"/>\n";
    const double ly = kTop + 16 + 16 * static_cast<double>(color);
    out += "<line x1=\"" + fmt(kLeft + 10) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" +
           fmt(kLeft + 34) + "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + stroke +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(kLeft + 40) + "\" y=\"" + fmt(ly) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + s.label + "</text>\n";
    ++color;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace milens
