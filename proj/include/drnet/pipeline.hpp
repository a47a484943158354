#pragma once

#include <span>
#include <vector>

#include "drnet/evaluation.hpp"
#include "drnet/model.hpp"
#include "drnet/temporal.hpp"

namespace drnet {

/// Single-pass detection of every image, frame index = position + frame_base.
/// Images are forwarded in batches; results do not depend on the batch size.
std::vector<Detection> detect_images(const Model& model, std::span<const LabeledImage> images,
                                     const PostprocessConfig& post = {}, std::size_t frame_base = 0,
                                     std::size_t batch = 16);

/// Detection over clips in clip_truth's frame numbering. Temporal models are
/// streamed with the schedule, others run frame by frame.
std::vector<Detection> detect_clips(const Model& model, std::span<const VideoClip> clips,
                                    const StreamOptions& options = {});

FrameTruth image_truth(std::span<const LabeledImage> images);

}  // namespace drnet
