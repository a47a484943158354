#include "drnet/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "drnet/config.hpp"

namespace drnet {

namespace {

constexpr double kWidth = 480, kHeight = 320;
constexpr double kLeft = 60, kRight = 140, kTop = 30, kBottom = 45;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return format_double(std::round(v * 100.0) / 100.0); }

}  // namespace

void write_svg(std::ostream& os, const LinePlot& plot) {
  const auto tx = [&](double x) { return plot.log2_x ? std::log2(x) : x; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : plot.series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (plot.x_range) std::tie(x0, x1) = std::pair{tx(plot.x_range->first), tx(plot.x_range->second)};
  if (plot.y_range) std::tie(y0, y1) = *plot.y_range;
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (tx(x) - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(plot.title) << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    const double gx = kLeft + pw * i / 4.0;
    const double gy = kTop + ph * (1.0 - i / 4.0);
    os << "<text x=\"" << gx << "\" y=\"" << kTop + ph + 14 << "\" text-anchor=\"middle\">"
       << num(plot.log2_x ? std::exp2(fx) : fx) << "</text>\n";
    os << "<text x=\"" << kLeft - 5 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">" << num(fy)
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 8 << "\" text-anchor=\"middle\">"
     << escape(plot.x_label) << "</text>\n";
  os << "<text transform=\"translate(14," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(plot.y_label) << "</text>\n";
  for (std::size_t i = 0; i < plot.series.size(); ++i) {
    const auto& s = plot.series[i];
    const char* color = kColors[i % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : s.points) os << num(px(x)) << ',' << num(py(y)) << ' ';
    os << "\"/>\n";
    for (const auto& [x, y] : s.points) {
      os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2\" fill=\"" << color
         << "\"/>\n";
    }
    const double ly = kTop + 12 + 16.0 * i;
    os << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly - 4 << "\" x2=\""
       << kWidth - kRight + 26 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << ly << "\">" << escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace drnet
