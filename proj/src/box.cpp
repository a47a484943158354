#include "drnet/box.hpp"

#include <algorithm>
#include <cmath>

#include "drnet/tensor.hpp"

namespace drnet {

bool Box::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
         w > 0.0 && h > 0.0;
}

Box box_from_corners(double x1, double y1, double x2, double y2) {
  return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

Box clip_box(const Box& b, double width, double height) {
  constexpr double kMinExtent = 1e-3;
  double x1 = std::clamp(b.x1(), 0.0, width);
  double y1 = std::clamp(b.y1(), 0.0, height);
  double x2 = std::clamp(b.x2(), 0.0, width);
  double y2 = std::clamp(b.y2(), 0.0, height);
  if (x2 - x1 < kMinExtent) x2 = x1 + kMinExtent;
  if (y2 - y1 < kMinExtent) y2 = y1 + kMinExtent;
  return box_from_corners(x1, y1, x2, y2);
}

double jaccard(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

BoxOffsets encode(const Box& gt, const Box& anchor, const OffsetCoding& coding) {
  return {(gt.cx - anchor.cx) / (anchor.w * coding.center_variance),
          (gt.cy - anchor.cy) / (anchor.h * coding.center_variance),
          std::log(gt.w / anchor.w) / coding.size_variance,
          std::log(gt.h / anchor.h) / coding.size_variance};
}

Box decode(const BoxOffsets& t, const Box& anchor, const OffsetCoding& coding) {
  const double tw = std::clamp(t[2], -kLogOffsetClamp, kLogOffsetClamp);
  const double th = std::clamp(t[3], -kLogOffsetClamp, kLogOffsetClamp);
  return Box{anchor.cx + t[0] * coding.center_variance * anchor.w,
             anchor.cy + t[1] * coding.center_variance * anchor.h,
             anchor.w * std::exp(tw * coding.size_variance),
             anchor.h * std::exp(th * coding.size_variance)};
}

BoxSet generate_anchors(std::span<const FeatureShape> feature_shapes, std::span<const int> strides,
                        std::span<const double> scales, std::span<const double> ratios) {
  DRNET_CHECK(feature_shapes.size() == strides.size() && strides.size() == scales.size(),
              "generate_anchors: ", feature_shapes.size(), " feature shapes, ", strides.size(),
              " strides and ", scales.size(), " scales must agree");
  DRNET_CHECK(!ratios.empty(), "generate_anchors: no aspect ratios");
  BoxSet set;
  set.anchors_per_cell = ratios.size();
  set.level_offsets.push_back(0);
  for (std::size_t l = 0; l < feature_shapes.size(); ++l) {
    const auto [h, w] = feature_shapes[l];
    DRNET_CHECK(h > 0 && w > 0, "generate_anchors: zero-sized feature map at level ", l);
    DRNET_CHECK(strides[l] > 0 && scales[l] > 0.0, "generate_anchors: invalid stride/scale at level ", l);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double cx = (static_cast<double>(j) + 0.5) * strides[l];
        const double cy = (static_cast<double>(i) + 0.5) * strides[l];
        for (double r : ratios) {
          DRNET_CHECK(r > 0.0, "generate_anchors: non-positive ratio");
          const double s = std::sqrt(r);
          set.boxes.push_back(Box{cx, cy, scales[l] * s, scales[l] / s});
        }
      }
    }
    set.level_shapes.push_back(feature_shapes[l]);
    set.level_offsets.push_back(set.boxes.size());
  }
  return set;
}

}  // namespace drnet
