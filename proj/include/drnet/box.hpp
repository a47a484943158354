#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace drnet {

/// Axis-aligned box in center-size form, input-image pixel units.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

Box box_from_corners(double x1, double y1, double x2, double y2);

/// Clips to [0,width]x[0,height]; degenerate results keep a minimal extent.
Box clip_box(const Box& b, double width, double height);

/// Variances of the SSD offset coding.
struct OffsetCoding {
  double center_variance = 0.1;
  double size_variance = 0.2;
};

/// (t_x, t_y, t_w, t_h) in coding units.
using BoxOffsets = std::array<double, 4>;

/// Log-space offsets are clamped to this magnitude before exponentiation.
inline constexpr double kLogOffsetClamp = 10.0;

double jaccard(const Box& a, const Box& b);
BoxOffsets encode(const Box& gt, const Box& anchor, const OffsetCoding& coding);
Box decode(const BoxOffsets& offsets, const Box& anchor, const OffsetCoding& coding);

struct FeatureShape {
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Anchors of all feature levels, level-major, then row-major over cells,
/// then ratio.
struct BoxSet {
  std::vector<Box> boxes;
  std::vector<FeatureShape> level_shapes;
  std::vector<std::size_t> level_offsets;  // size levels+1
  std::size_t anchors_per_cell = 0;

  std::size_t size() const { return boxes.size(); }
  std::size_t levels() const { return level_shapes.size(); }
  std::size_t level_count(std::size_t level) const {
    return level_offsets[level + 1] - level_offsets[level];
  }
  std::span<const Box> level(std::size_t l) const {
    return std::span<const Box>(boxes).subspan(level_offsets[l], level_count(l));
  }
};

BoxSet generate_anchors(std::span<const FeatureShape> feature_shapes, std::span<const int> strides,
                        std::span<const double> scales, std::span<const double> ratios);

}  // namespace drnet
