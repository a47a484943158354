#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "drnet/dataset.hpp"
#include "drnet/model.hpp"
#include "drnet/postprocess.hpp"

namespace drnet {

struct KeyFrameSchedule {
  int k = 1;        // key frame duration
  double e = 1.0;   // soft refinement coefficient
  void validate() const;
  bool is_key(std::size_t frame) const { return frame % static_cast<std::size_t>(k) == 0; }
};

/// ar * e, elementwise.
Tensor soft_refine(const Tensor& ar, double e);

struct StreamOptions {
  KeyFrameSchedule schedule;
  PostprocessConfig post;
  /// Recompute feature offsets from the softened ar instead of the raw one.
  bool offsets_from_soft = false;
};

struct StreamResult {
  std::vector<std::vector<Detection>> frames;
  std::vector<std::size_t> key_frames;
  std::size_t rg_calls = 0;
  std::size_t rd_calls = 0;
  double forward_seconds = 0.0;  // RG + RD forward only
};

/// Causal streaming detection with a temporal model: RG on key frames, RD on
/// every frame against the stored (softened) state. Detection frame indices
/// are frame_base + position in the clip.
StreamResult stream_detect(const Model& model, std::span<const LabeledImage> frames,
                           const StreamOptions& options, std::size_t frame_base = 0);

/// RG invocations of a clip under period k.
std::size_t expected_rg_calls(std::size_t frames, int k);

struct SweepRow {
  int k = 1;
  double e = 1.0;
  double map = 0.0;
  std::size_t rg_calls = 0;
  std::size_t rd_calls = 0;
  double ms_per_frame = 0.0;
};

struct SweepOptions {
  std::vector<int> ks{1, 2, 4, 8};
  std::vector<double> es{1.0, 0.75, 0.5};
  PostprocessConfig post;
  bool offsets_from_soft = false;
  /// Forward time sums, over clips, the minimum of this many interleaved passes.
  int timing_repeats = 1;
};

/// Grid evaluation over (e, k), rows ordered e-major in the given order.
std::vector<SweepRow> sweep(const Model& model, std::span<const VideoClip> clips,
                            const SweepOptions& options);

/// Ground truth of all clip frames in stream_detect's global frame numbering.
std::vector<std::vector<GroundTruth>> clip_truth(std::span<const VideoClip> clips);

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows);
void write_sweep_svg(std::ostream& os, std::span<const SweepRow> rows, const std::string& title);

}  // namespace drnet
