#include "drnet/pipeline.hpp"

#include <algorithm>

namespace drnet {

std::vector<Detection> detect_images(const Model& model, std::span<const LabeledImage> images,
                                     const PostprocessConfig& post, std::size_t frame_base,
                                     std::size_t batch) {
  DRNET_CHECK(batch >= 1, "detect_images: batch must be >= 1");
  std::vector<Detection> out;
  for (std::size_t s = 0; s < images.size(); s += batch) {
    const std::size_t end = std::min(images.size(), s + batch);
    std::vector<const Tensor*> ptrs;
    for (std::size_t i = s; i < end; ++i) ptrs.push_back(&images[i].image);
    Tape tape(false);
    const ForwardResult fwd = forward(tape, model, Var(stack_images(ptrs)));
    for (std::size_t n = 0; n < ptrs.size(); ++n) {
      const auto d = postprocess(fwd.outputs, n, model.config().anchors_per_cell(), post, frame_base + s + n);
      out.insert(out.end(), d.begin(), d.end());
    }
  }
  return out;
}

std::vector<Detection> detect_clips(const Model& model, std::span<const VideoClip> clips,
                                    const StreamOptions& options) {
  std::vector<Detection> out;
  std::size_t base = 0;
  for (const auto& clip : clips) {
    if (is_temporal(model.config().variant)) {
      const StreamResult r = stream_detect(model, clip.frames, options, base);
      for (const auto& f : r.frames) out.insert(out.end(), f.begin(), f.end());
    } else {
      const auto d = detect_images(model, clip.frames, options.post, base);
      out.insert(out.end(), d.begin(), d.end());
    }
    base += clip.frames.size();
  }
  return out;
}

FrameTruth image_truth(std::span<const LabeledImage> images) {
  FrameTruth truth;
  truth.reserve(images.size());
  for (const auto& img : images) truth.push_back(img.objects);
  return truth;
}

}  // namespace drnet
