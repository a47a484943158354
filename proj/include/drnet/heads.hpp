#pragma once

#include <span>
#include <vector>

#include "drnet/box.hpp"
#include "drnet/ops.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

struct ConvWeights {
  Var weight;
  Var bias;
};

/// One detection path of the multi-deformable head.
struct HeadPath {
  int kernel = 3;
  int dilation = 1;

  int padding() const { return dilation * (kernel - 1) / 2; }
  int taps() const { return kernel * kernel; }
  friend bool operator==(const HeadPath&, const HeadPath&) = default;
};

struct MultiHeadConfig {
  std::vector<HeadPath> paths{{3, 1}, {5, 1}};

  std::size_t size() const { return paths.size(); }
  void validate() const;
};

/// Weights of one detection path: localization (4 per anchor) and
/// confidence (classes+1 per anchor) kernels.
struct PathWeights {
  ConvWeights local;
  ConvWeights conf;
};

/// Anchor offsets per level ([N,4A,H,W], coding units) and feature offsets per
/// level and path. An undefined ar means "no anchor refinement"; an undefined
/// offset entry means zero offsets.
struct RefinementState {
  std::vector<Var> ar;
  std::vector<std::vector<Var>> offsets;

  std::size_t levels() const { return ar.size(); }
  /// Copy holding constant leaves only.
  RefinementState detached() const;
};

/// Head output of one feature level.
struct DetectionOutput {
  Var logits;  // [N, (C+1)*A, H, W]
  Var local;   // [N, 4*A, H, W]
  /// Per image, per level anchor: local offsets decoded against the refined
  /// anchor (ar (+) ao).
  std::vector<std::vector<Box>> boxes;
};

/// ar = W_ar * f_ARM per level (3x3, padding 1).
std::vector<Var> arm_forward(Tape& tape, std::span<const Var> features,
                             std::span<const ConvWeights> weights);

/// Feature offsets from anchor offsets through a 1x1 convolution.
Var feature_location_refine(Tape& tape, const Var& ar, const ConvWeights& weights);

/// Refined anchors ar (+) ao of image n for one level; ar may be empty.
std::vector<Box> refined_anchors(const Tensor& ar, std::size_t n, std::span<const Box> anchors,
                                 std::size_t anchors_per_cell, const OffsetCoding& coding);

/// Two-step decode of a level: local (+) (ar (+) ao) for every image.
std::vector<std::vector<Box>> decode_level(const Tensor& local, const Tensor& ar,
                                           std::span<const Box> anchors,
                                           std::size_t anchors_per_cell,
                                           const OffsetCoding& coding);

/// Anchor-offset detection with a single path. When deformable is false or
/// offsets is undefined the head is a plain convolution.
DetectionOutput anchor_offset_detect(Tape& tape, const Var& features, const Var& ar,
                                     const Var& offsets, const PathWeights& weights,
                                     const HeadPath& path, std::span<const Box> anchors,
                                     std::size_t anchors_per_cell, const OffsetCoding& coding,
                                     bool deformable = true);

/// Multi-path detection: per-path outputs fused by elementwise summation in
/// path order, then decoded once.
DetectionOutput multi_head_detect(Tape& tape, const Var& features, const Var& ar,
                                  std::span<const Var> offsets, const MultiHeadConfig& config,
                                  std::span<const PathWeights> weights,
                                  std::span<const Box> anchors, std::size_t anchors_per_cell,
                                  const OffsetCoding& coding, bool deformable = true);

}  // namespace drnet
