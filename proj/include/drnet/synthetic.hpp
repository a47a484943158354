#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "drnet/dataset.hpp"

namespace drnet {

enum class Shape2d { Circle = 1, Square = 2, Triangle = 3 };

inline constexpr int kShapeClasses = 3;

/// Parameters of the moving-shapes generator. Sizes and velocities are in
/// pixels (per frame); every shape occupies an s x s footprint.
struct SceneSpec {
  std::uint64_t seed = 0;
  int canvas = 64;
  int min_objects = 1;
  int max_objects = 3;
  int min_size = 10;
  int max_size = 32;
  int max_velocity = 2;
  bool occlusion = false;  // false: initial footprints never overlap
  double noise = 0.1;      // amplitude of the additive uniform noise
  bool color = false;
  bool bounce = true;

  int channels() const { return color ? 3 : 1; }
  void validate() const;
};

/// One object of a scene: footprint top-left (x, y), size, velocity.
struct SceneObject {
  Shape2d shape = Shape2d::Square;
  int x = 0;
  int y = 0;
  int size = 10;
  int vx = 0;
  int vy = 0;
  std::vector<double> color;  // per channel intensity
};

/// Renders objects over a background; the tight box of each visible object
/// is taken from its own mask, so occluded objects keep their full box.
LabeledImage render_scene(const SceneSpec& spec, const std::vector<SceneObject>& objects,
                          const Tensor& background);

/// Pure function of (spec, index).
LabeledImage generate_image(const SceneSpec& spec, std::size_t index);
std::vector<LabeledImage> generate_images(const SceneSpec& spec, std::size_t count);

/// Position along one axis at frame t for a footprint of the given size.
int object_position(int start, int velocity, int t, int size, int canvas, bool bounce);

/// Pure function of (spec, index, frames).
VideoClip generate_video(const SceneSpec& spec, std::size_t index, int frames);
std::vector<VideoClip> generate_videos(const SceneSpec& spec, std::size_t count, int frames);

/// Binary PGM (1 channel) or PPM (3 channels); values quantized to k/255.
void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path);

/// <dir>/<name> images plus <dir>/annotations.jsonl.
void write_image_set(const std::filesystem::path& dir, const std::vector<LabeledImage>& images);
/// Sorted by file name.
std::vector<LabeledImage> read_image_set(const std::filesystem::path& dir);

/// <dir>/manifest.json plus one frame directory per clip.
void write_video_set(const std::filesystem::path& dir, const std::vector<VideoClip>& clips);
std::vector<VideoClip> read_video_set(const std::filesystem::path& dir);

}  // namespace drnet
