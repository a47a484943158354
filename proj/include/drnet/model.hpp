#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drnet/box.hpp"
#include "drnet/checkpoint.hpp"
#include "drnet/config.hpp"
#include "drnet/heads.hpp"

namespace drnet {

enum class Variant {
  DRNet,   // anchor refinement + feature location refinement + deformable head
  SSD4s,   // 4-scale baseline: plain heads on the fused features, original anchors
  TRNet,   // temporal pair: RG emits anchor offsets, RD detects with plain heads
  TDRNet,  // temporal pair: RG emits anchor and feature offsets, RD is deformable
};

/// Where the deformable head's sampling offsets come from.
enum class OffsetSource {
  Anchor,   // 1x1 conv over anchor offsets
  Feature,  // 3x3 conv over ODM features
  None,     // zero offsets
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
std::string to_string(OffsetSource s);
OffsetSource parse_offset_source(const std::string& s);

bool is_temporal(Variant v);

struct ModelConfig {
  int input_size = 64;
  int input_channels = 1;
  std::vector<int> channels{16, 32, 64, 64};
  int odm_channels = 32;
  std::vector<int> strides{4, 8, 16, 32};
  std::vector<double> anchor_scales{8, 16, 32, 48};
  std::vector<double> ratios{1.0, 2.0, 0.5};
  int num_classes = 3;
  MultiHeadConfig head;
  Variant variant = Variant::DRNet;
  OffsetSource offset_source = OffsetSource::Anchor;
  bool deformable_head = true;
  /// Let the ODM regression targets carry gradient back into ar.
  bool refined_anchor_grad = false;
  /// Clip refined anchors to the image before ODM matching.
  bool clip_refined_anchors = false;
  /// RD reuses RG's backbone parameters.
  bool tie_rg_rd = false;
  /// Start anchor and feature refinement kernels at zero.
  bool zero_init_refinement = false;
  OffsetCoding coding;

  std::size_t anchors_per_cell() const { return ratios.size(); }
  std::vector<FeatureShape> level_shapes() const;
  void validate() const;

  KeyValues to_key_values() const;
  static ModelConfig from_key_values(const KeyValues& kv);
  static std::vector<std::string> keys();
};

/// Named parameter store plus the anchor layout of a configuration. Copying
/// is disabled because parameters are shared handles; use clone().
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model clone() const;

  const ModelConfig& config() const noexcept { return config_; }
  const BoxSet& anchors() const noexcept { return anchors_; }

  std::span<const std::pair<std::string, Var>> parameters() const { return params_; }
  std::vector<Var> parameter_vars() const;
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  const Var& param(const std::string& name) const;
  ConvWeights conv(const std::string& name) const;
  /// Number of scalar weights.
  std::size_t parameter_count() const;

  NamedTensors state() const;
  /// Requires every parameter exactly once with matching shape.
  void load_state(const NamedTensors& tensors);

  std::uint64_t step = 0;

 private:
  Model() = default;
  void add_conv(const std::string& name, int out, int in, int kernel, int init,
                std::uint64_t seed);

  ModelConfig config_;
  BoxSet anchors_;
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Closed-form scalar weight count of a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

struct ForwardResult {
  RefinementState state;
  std::vector<DetectionOutput> outputs;  // per level
};

/// Single-image-pass detector for any variant (temporal variants run RD on
/// RG's state of the same frame).
ForwardResult forward(Tape& tape, const Model& model, const Var& images);

/// DRNet / SSD4s forward: backbone -> ARM offsets, top-down fusion -> heads.
ForwardResult forward_drnet(Tape& tape, const Model& model, const Var& images);

/// Reference generator of a temporal variant.
RefinementState forward_rg(Tape& tape, const Model& model, const Var& images);

/// Refinement detector of a temporal variant, driven by an external state.
std::vector<DetectionOutput> forward_rd(Tape& tape, const Model& model, const Var& images,
                                        const RefinementState& state);

/// Feature offsets recomputed from given anchor offsets with the model's
/// refinement kernels (per level, per path). Empty when the model has none.
std::vector<std::vector<Var>> refine_offsets(Tape& tape, const Model& model,
                                             std::span<const Var> ar);

/// Writes <stem>.afw (weights) and <stem>.cfg (config, step).
void save_checkpoint(const Model& model, const std::filesystem::path& stem);
Model load_checkpoint(const std::filesystem::path& stem);

}  // namespace drnet
