#include "drnet/heads.hpp"

#include "drnet/deform.hpp"

namespace drnet {

void MultiHeadConfig::validate() const {
  DRNET_CHECK(!paths.empty(), "multi-head config needs at least one path");
  for (const auto& p : paths) {
    DRNET_CHECK(p.kernel >= 1 && p.kernel % 2 == 1, "head kernel sizes must be odd, got ",
                p.kernel);
    DRNET_CHECK(p.dilation >= 1, "head dilation must be >= 1, got ", p.dilation);
  }
}

RefinementState RefinementState::detached() const {
  RefinementState s;
  for (const auto& a : ar) s.ar.push_back(a.defined() ? a.detach() : Var());
  for (const auto& level : offsets) {
    auto& out = s.offsets.emplace_back();
    for (const auto& o : level) out.push_back(o.defined() ? o.detach() : Var());
  }
  return s;
}

std::vector<Var> arm_forward(Tape& tape, std::span<const Var> features,
                             std::span<const ConvWeights> weights) {
  DRNET_CHECK(features.size() == weights.size(), "arm_forward: ", features.size(),
              " feature maps for ", weights.size(), " weight sets");
  std::vector<Var> ar;
  ar.reserve(features.size());
  for (std::size_t l = 0; l < features.size(); ++l) {
    ar.push_back(conv2d(tape, features[l], weights[l].weight, weights[l].bias, Conv2dParams{1, 1, 1}));
  }
  return ar;
}

Var feature_location_refine(Tape& tape, const Var& ar, const ConvWeights& weights) {
  const auto& ws = weights.weight.shape();
  DRNET_CHECK(ws.size() == 4 && ws[2] == 1 && ws[3] == 1,
              "feature_location_refine: W_fr must be a 1x1 kernel, got ", shape_str(ws));
  DRNET_CHECK(ws[0] % 2 == 0, "feature_location_refine: odd offset channel count ", ws[0]);
  return conv2d(tape, ar, weights.weight, weights.bias, Conv2dParams{});
}

std::vector<Box> refined_anchors(const Tensor& ar, std::size_t n, std::span<const Box> anchors,
                                 std::size_t anchors_per_cell, const OffsetCoding& coding) {
  std::vector<Box> out(anchors.begin(), anchors.end());
  if (ar.empty()) return out;
  const std::size_t hw = ar.extent(2) * ar.extent(3);
  DRNET_CHECK(ar.extent(1) == 4 * anchors_per_cell && hw * anchors_per_cell == anchors.size(),
              "refined_anchors: ar ", shape_str(ar.shape()), " does not match ", anchors.size(),
              " anchors");
  const std::size_t c = ar.extent(1);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t a = 0; a < anchors_per_cell; ++a) {
      BoxOffsets t;
      for (std::size_t k = 0; k < 4; ++k) t[k] = ar[(n * c + a * 4 + k) * hw + p];
      const std::size_t idx = p * anchors_per_cell + a;
      out[idx] = decode(t, anchors[idx], coding);
    }
  }
  return out;
}

std::vector<std::vector<Box>> decode_level(const Tensor& local, const Tensor& ar,
                                           std::span<const Box> anchors,
                                           std::size_t anchors_per_cell,
                                           const OffsetCoding& coding) {
  const std::size_t batch = local.extent(0);
  const std::size_t c = local.extent(1);
  const std::size_t hw = local.extent(2) * local.extent(3);
  DRNET_CHECK(c == 4 * anchors_per_cell && hw * anchors_per_cell == anchors.size(),
              "decode_level: head output ", shape_str(local.shape()), " does not match ",
              anchors.size(), " anchors");
  std::vector<std::vector<Box>> out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const auto reference = refined_anchors(ar, n, anchors, anchors_per_cell, coding);
    auto& boxes = out[n];
    boxes.resize(anchors.size());
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t a = 0; a < anchors_per_cell; ++a) {
        BoxOffsets t;
        for (std::size_t k = 0; k < 4; ++k) t[k] = local[(n * c + a * 4 + k) * hw + p];
        const std::size_t idx = p * anchors_per_cell + a;
        boxes[idx] = decode(t, reference[idx], coding);
      }
    }
  }
  return out;
}

namespace {

// Runs one path with localization and confidence kernels fused along the
// output-channel axis; returns [N, 4A + (C+1)A, H, W].
Var path_forward(Tape& tape, const Var& features, const Var& offsets, const PathWeights& w,
                 const HeadPath& path, bool deformable) {
  const auto& lw = w.local.weight.shape();
  const auto& cw = w.conf.weight.shape();
  DRNET_CHECK(lw.size() == 4 && cw.size() == 4 && lw[2] == static_cast<std::size_t>(path.kernel) &&
                  lw[3] == static_cast<std::size_t>(path.kernel) && cw[2] == lw[2] && cw[3] == lw[3],
              "detection head: weights ", shape_str(lw), "/", shape_str(cw),
              " do not match path kernel ", path.kernel);
  const Var weights[2] = {w.local.weight, w.conf.weight};
  const Var biases[2] = {w.local.bias, w.conf.bias};
  const Var weight = concat(tape, weights, 0);
  const Var bias = concat(tape, biases, 0);
  const Conv2dParams params{1, path.padding(), path.dilation};
  if (deformable && offsets.defined()) {
    return deform_conv2d(tape, features, weight, bias, offsets, params);
  }
  return conv2d(tape, features, weight, bias, params);
}

DetectionOutput split_and_decode(Tape& tape, const Var& fused, const Var& ar,
                                 std::size_t local_channels, std::span<const Box> anchors,
                                 std::size_t anchors_per_cell, const OffsetCoding& coding) {
  DetectionOutput out;
  const std::size_t total = fused.shape()[1];
  out.local = slice(tape, fused, 1, 0, local_channels);
  out.logits = slice(tape, fused, 1, local_channels, total);
  const std::size_t cells = fused.shape()[2] * fused.shape()[3];
  DRNET_CHECK(cells * anchors_per_cell == anchors.size(), "detection head: grid of ", cells,
              " cells does not match ", anchors.size(), " anchors");
  if (ar.defined()) {
    DRNET_CHECK(ar.shape()[0] == fused.shape()[0] && ar.shape()[2] == fused.shape()[2] &&
                    ar.shape()[3] == fused.shape()[3],
                "detection head: anchor offsets ", shape_str(ar.shape()),
                " do not match feature grid ", shape_str(fused.shape()));
  }
  out.boxes = decode_level(out.local.value(), ar.defined() ? ar.value() : Tensor(), anchors,
                           anchors_per_cell, coding);
  return out;
}

}  // namespace

DetectionOutput anchor_offset_detect(Tape& tape, const Var& features, const Var& ar,
                                     const Var& offsets, const PathWeights& weights,
                                     const HeadPath& path, std::span<const Box> anchors,
                                     std::size_t anchors_per_cell, const OffsetCoding& coding,
                                     bool deformable) {
  const Var fused = path_forward(tape, features, offsets, weights, path, deformable);
  return split_and_decode(tape, fused, ar, weights.local.weight.shape()[0], anchors,
                          anchors_per_cell, coding);
}

DetectionOutput multi_head_detect(Tape& tape, const Var& features, const Var& ar,
                                  std::span<const Var> offsets, const MultiHeadConfig& config,
                                  std::span<const PathWeights> weights,
                                  std::span<const Box> anchors, std::size_t anchors_per_cell,
                                  const OffsetCoding& coding, bool deformable) {
  config.validate();
  DRNET_CHECK(weights.size() == config.size(), "multi_head_detect: ", weights.size(),
              " weight sets for ", config.size(), " paths");
  DRNET_CHECK(offsets.empty() || offsets.size() == config.size(), "multi_head_detect: ",
              offsets.size(), " offset maps for ", config.size(), " paths");
  Var fused;
  for (std::size_t p = 0; p < config.size(); ++p) {
    const Var off = offsets.empty() ? Var() : offsets[p];
    const Var out = path_forward(tape, features, off, weights[p], config.paths[p], deformable);
    fused = p == 0 ? out : add(tape, fused, out);
  }
  return split_and_decode(tape, fused, ar, weights[0].local.weight.shape()[0], anchors,
                          anchors_per_cell, coding);
}

}  // namespace drnet
