#pragma once

#include <span>
#include <vector>

#include "drnet/tensor.hpp"

namespace drnet {

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// Output extent of a convolution along one axis.
int conv_output_extent(int input, int kernel, const Conv2dParams& p);

/// Cross-correlation of input [N,Ci,H,W] with weight [Co,Ci,kh,kw] plus bias
/// [Co]. The bias may be undefined (no bias).
Var conv2d(Tape& tape, const Var& input, const Var& weight, const Var& bias,
           const Conv2dParams& params);

Var add(Tape& tape, const Var& a, const Var& b);
Var sub(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
Var add(Tape& tape, const Var& a, double s);
Var mul(Tape& tape, const Var& a, double s);
Var relu(Tape& tape, const Var& a);
Var upsample_nearest2x(Tape& tape, const Var& a);

/// Softmax along axis 1 (channels of a feature map, or columns of a matrix).
Var softmax_channel(Tape& tape, const Var& a);

/// Elementwise 0.5*d^2 for |d|<1, else |d|-0.5.
Var smooth_l1(Tape& tape, const Var& d);

/// Per-row cross entropy of raw logits [M,K] against class indices; returns [M].
Var cross_entropy(Tape& tape, const Var& logits, std::span<const int> classes);

/// Sum of all elements as a one-element tensor.
Var sum(Tape& tape, const Var& a);

Var concat(Tape& tape, std::span<const Var> parts, std::size_t axis);
Var slice(Tape& tape, const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Permutes a head output [N, A*K, H, W] into per-anchor rows [N, H*W*A, K],
/// row order (y, x, anchor) to match anchor generation order.
Var anchor_rows(Tape& tape, const Var& a, std::size_t anchors_per_cell, std::size_t row_width);

/// Picks rows of a [N, T, K] (or [T, K]) tensor by flat index n*T + t; returns [M, K].
Var gather_rows(Tape& tape, const Var& a, std::span<const std::size_t> rows);

}  // namespace drnet
