#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "drnet/box.hpp"
#include "drnet/heads.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

struct Detection {
  std::size_t frame = 0;
  int label = 1;
  double score = 0.0;
  Box box;
  std::size_t anchor = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct PostprocessConfig {
  double score_threshold = 0.01;
  double nms_threshold = 0.45;
  std::size_t top_k = 200;
};

/// Score desc, then anchor asc, then label asc.
bool canonical_before(const Detection& a, const Detection& b);

/// Keeps (anchor, class >= 1) pairs whose softmax probability is strictly
/// above the threshold. probs is [T, C+1], boxes has T entries.
std::vector<Detection> filter_scores(const Tensor& probs, std::span<const Box> boxes,
                                     double threshold = 0.01, std::size_t frame = 0);

/// Greedy per-class suppression of boxes overlapping a kept box by IoU > threshold.
/// Output is in canonical order.
std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold = 0.45);

/// The k best detections in canonical order.
std::vector<Detection> top_k(std::vector<Detection> detections, std::size_t k = 200);

/// Softmax class probabilities of image n as [T, C+1], anchors in generation order.
Tensor class_probabilities(std::span<const DetectionOutput> outputs, std::size_t n,
                           std::size_t anchors_per_cell);

/// Full pipeline for image n of a forward pass.
std::vector<Detection> postprocess(std::span<const DetectionOutput> outputs, std::size_t n,
                                   std::size_t anchors_per_cell, const PostprocessConfig& config,
                                   std::size_t frame = 0);

void write_detections_jsonl(std::ostream& os, std::span<const Detection> detections);
/// Throws with the line number on malformed input.
std::vector<Detection> read_detections_jsonl(std::istream& is);

}  // namespace drnet
