#pragma once

#include <string>
#include <vector>

#include "drnet/box.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

/// Labeled object; label is 1..C (0 is reserved for background).
struct GroundTruth {
  Box box;
  int label = 1;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Image [C,H,W] with values in [0,1] plus its objects.
struct LabeledImage {
  std::string name;
  Tensor image;
  std::vector<GroundTruth> objects;
  /// Per-object identity within a video; empty for still images.
  std::vector<int> track_ids;
};

struct VideoClip {
  std::string name;
  std::vector<LabeledImage> frames;
};

/// Stacks images [C,H,W] into a batch [N,C,H,W].
Tensor stack_images(const std::vector<const Tensor*>& images);

/// Mirrors an image and its boxes about the vertical axis.
LabeledImage hflip(const LabeledImage& sample);

}  // namespace drnet
