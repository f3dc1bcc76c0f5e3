#pragma once

#include <string>
#include <vector>

namespace bilevel {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = true;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

// Line chart as a standalone SVG document. Non-finite points and, on log
// axes, non-positive coordinates are dropped. No series gives empty axes.
std::string render_svg(const std::vector<PlotSeries>& series, const PlotSpec& spec);

}  // namespace bilevel
