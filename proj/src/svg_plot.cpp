#include "bilevel/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace bilevel {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string render_svg(const std::vector<PlotSeries>& series, const PlotSpec& spec) {
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0) && (!spec.log_y || y > 0);
  };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x0 <= x1)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double v) { return left + (tx(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return top + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
         std::to_string(spec.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(left + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(spec.title) + "</text>\n";
  out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    const double gx = left + pw * i / 4.0, gy = top + ph - ph * i / 4.0;
    out += "<text x=\"" + num(gx) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" +
           tick_label(spec.log_x ? std::pow(10.0, fx) : fx) + "</text>\n";
    out += "<text x=\"" + num(left - 6) + "\" y=\"" + num(gy + 4) + "\" text-anchor=\"end\">" +
           tick_label(spec.log_y ? std::pow(10.0, fy) : fy) + "</text>\n";
  }
  out += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(spec.height - 10.0) + "\" text-anchor=\"middle\">" +
         escape(spec.x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(top + ph / 2) + ")\">" + escape(spec.y_label) + "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    const char* color = kColors[s % (sizeof kColors / sizeof *kColors)];
    std::string pts;
    for (std::size_t i = 0; i < std::min(sr.x.size(), sr.y.size()); ++i) {
      if (!usable(sr.x[i], sr.y[i])) continue;
      pts += num(px(sr.x[i])) + "," + num(py(sr.y[i])) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(s);
    out += "<line x1=\"" + num(left + pw + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + pw + 30) +
           "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + num(left + pw + 34) + "\" y=\"" + num(ly) + "\">" + escape(sr.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace bilevel
