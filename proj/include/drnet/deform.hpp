#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "drnet/ops.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

/// Bilinear interpolation of one H x W plane at fractional (y, x). Corners
/// outside the plane read as zero; locations with y <= -1, y >= H, x <= -1 or
/// x >= W yield 0.
double bilinear_sample(const double* plane, int height, int width, double y, double x);

/// Per-channel bilinear sample of image n of a [N,C,H,W] feature map.
std::vector<double> bilinear_sample(const Tensor& feature, std::size_t n, double y, double x);

/// Deformable convolution. offsets is [N, 2*kh*kw, Ho, Wo] holding
/// (dy_1, dx_1, ..., dy_K, dx_K) per output cell, taps row-major over the
/// kernel grid, in feature-map cells. Differentiable in input, weight, bias
/// and offsets.
Var deform_conv2d(Tape& tape, const Var& input, const Var& weight, const Var& bias,
                  const Var& offsets, const Conv2dParams& params);

/// Offsets predicted from features with a plain convolution (the classic
/// deformable-convolution wiring). weight must emit 2*kernel*kernel channels.
Var offsets_from_features(Tape& tape, const Var& features, const Var& weight, const Var& bias,
                          int kernel);

/// Center-tap sampling location of one output cell, in input-image pixels.
struct SamplingCenter {
  std::size_t level = 0;
  std::size_t path = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double base_x = 0.0;
  double base_y = 0.0;
  double refined_x = 0.0;
  double refined_y = 0.0;
};

/// Extracts the refined center taps of image n from an offset map produced
/// for a stride-1 "same" kernel of size kernel x kernel.
std::vector<SamplingCenter> sampling_centers(const Tensor& offsets, std::size_t n, int kernel,
                                             int feature_stride, std::size_t level,
                                             std::size_t path);

void write_sampling_centers_csv(std::ostream& os, std::span<const SamplingCenter> centers);

}  // namespace drnet
