#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace drnet {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Minimal line chart; axes auto-fit unless a range is given.
struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<std::pair<double, double>> x_range;
  std::optional<std::pair<double, double>> y_range;
  bool log2_x = false;
  std::vector<Series> series;
};

void write_svg(std::ostream& os, const LinePlot& plot);

}  // namespace drnet
