#include "drnet/model.hpp"

#include <cmath>
#include <random>
#include <set>

#include "drnet/deform.hpp"

namespace drnet {

namespace {

constexpr int kLevels = 4;

enum Init { kHe = 0, kHead = 1, kZero = 2 };

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string level_name(const std::string& base, std::size_t l) {
  return base + ".level" + std::to_string(l);
}

std::string path_name(const std::string& base, std::size_t l, std::size_t p) {
  return level_name(base, l) + ".path" + std::to_string(p);
}

std::string backbone_prefix(const Model& m, bool rd) {
  if (!is_temporal(m.config().variant)) return "";
  return rd && !m.config().tie_rg_rd ? "rd." : "rg.";
}

std::string head_prefix(const Model& m, bool rd) {
  if (!is_temporal(m.config().variant)) return "";
  return rd ? "rd." : "rg.";
}

bool has_arm(Variant v) { return v != Variant::SSD4s; }

bool has_offsets(const ModelConfig& c) {
  if (!c.deformable_head) return false;
  switch (c.variant) {
    case Variant::DRNet: return c.offset_source != OffsetSource::None;
    case Variant::TDRNet: return true;
    default: return false;
  }
}

bool deformable_rd(const ModelConfig& c) {
  switch (c.variant) {
    case Variant::DRNet: return c.deformable_head;
    case Variant::TDRNet: return true;
    default: return false;
  }
}

std::vector<Var> backbone(Tape& tape, const Model& m, const std::string& prefix, const Var& images) {
  const auto relu_conv = [&](const Var& x, const std::string& name, int stride) {
    const ConvWeights w = m.conv(prefix + name);
    return relu(tape, conv2d(tape, x, w.weight, w.bias, Conv2dParams{stride, 1, 1}));
  };
  std::vector<Var> feats;
  Var x = relu_conv(images, "backbone.stem", 2);
  for (int s = 0; s < kLevels; ++s) {
    const std::string stage = "backbone.stage" + std::to_string(s + 1);
    x = relu_conv(x, stage + ".down", 2);
    x = relu_conv(x, stage + ".conv", 1);
    feats.push_back(x);
  }
  return feats;
}

Var crop_to(Tape& tape, const Var& x, std::size_t h, std::size_t w) {
  Var y = x;
  if (y.shape()[2] != h) y = slice(tape, y, 2, 0, h);
  if (y.shape()[3] != w) y = slice(tape, y, 3, 0, w);
  return y;
}

std::vector<Var> top_down(Tape& tape, const Model& m, const std::string& prefix,
                          const std::vector<Var>& feats) {
  std::vector<Var> out(feats.size());
  Var above;
  for (int l = kLevels - 1; l >= 0; --l) {
    const ConvWeights lat = m.conv(level_name(prefix + "fpn.lateral", l));
    const ConvWeights smooth = m.conv(level_name(prefix + "fpn.smooth", l));
    Var x = conv2d(tape, feats[l], lat.weight, lat.bias, Conv2dParams{});
    if (above.defined()) {
      const Var up = crop_to(tape, upsample_nearest2x(tape, above), x.shape()[2], x.shape()[3]);
      x = add(tape, x, up);
    }
    out[l] = relu(tape, conv2d(tape, x, smooth.weight, smooth.bias, Conv2dParams{1, 1, 1}));
    above = out[l];
  }
  return out;
}

std::vector<PathWeights> path_weights(const Model& m, const std::string& prefix, std::size_t l) {
  std::vector<PathWeights> out;
  for (std::size_t p = 0; p < m.config().head.size(); ++p) {
    const std::string base = path_name(prefix + "odm", l, p);
    out.push_back(PathWeights{m.conv(base + ".local"), m.conv(base + ".conf")});
  }
  return out;
}

std::vector<Var> arm(Tape& tape, const Model& m, const std::string& prefix,
                     const std::vector<Var>& feats) {
  std::vector<ConvWeights> w;
  for (int l = 0; l < kLevels; ++l) w.push_back(m.conv(level_name(prefix + "arm", l)));
  return arm_forward(tape, feats, w);
}

std::vector<Var> level_offsets(Tape& tape, const Model& m, const std::string& prefix, std::size_t l,
                               const Var& ar, const Var& odm_features) {
  const ModelConfig& c = m.config();
  std::vector<Var> out;
  if (!has_offsets(c)) return out;
  for (std::size_t p = 0; p < c.head.size(); ++p) {
    const ConvWeights w = m.conv(path_name(prefix + "fr", l, p));
    if (c.offset_source == OffsetSource::Feature && c.variant == Variant::DRNet) {
      out.push_back(offsets_from_features(tape, odm_features, w.weight, w.bias,
                                          c.head.paths[p].kernel));
    } else {
      out.push_back(feature_location_refine(tape, ar, w));
    }
  }
  return out;
}

void check_images(const Model& m, const Var& images) {
  const auto& s = images.shape();
  const auto& c = m.config();
  DRNET_CHECK(s.size() == 4 && s[1] == static_cast<std::size_t>(c.input_channels) &&
                  s[2] == static_cast<std::size_t>(c.input_size) &&
                  s[3] == static_cast<std::size_t>(c.input_size),
              "model expects images [N,", c.input_channels, ",", c.input_size, ",", c.input_size,
              "], got ", shape_str(s));
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::DRNet: return "drnet";
    case Variant::SSD4s: return "ssd4s";
    case Variant::TRNet: return "trnet";
    case Variant::TDRNet: return "tdrnet";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "drnet") return Variant::DRNet;
  if (s == "ssd4s") return Variant::SSD4s;
  if (s == "trnet") return Variant::TRNet;
  if (s == "tdrnet") return Variant::TDRNet;
  throw Error("unknown variant '" + s + "' (expected drnet, ssd4s, trnet, tdrnet)");
}

std::string to_string(OffsetSource s) {
  switch (s) {
    case OffsetSource::Anchor: return "anchor";
    case OffsetSource::Feature: return "feature";
    case OffsetSource::None: return "none";
  }
  return "?";
}

OffsetSource parse_offset_source(const std::string& s) {
  if (s == "anchor") return OffsetSource::Anchor;
  if (s == "feature") return OffsetSource::Feature;
  if (s == "none") return OffsetSource::None;
  throw Error("unknown offset source '" + s + "' (expected anchor, feature, none)");
}

bool is_temporal(Variant v) { return v == Variant::TRNet || v == Variant::TDRNet; }

std::vector<FeatureShape> ModelConfig::level_shapes() const {
  std::vector<FeatureShape> out;
  std::size_t extent = static_cast<std::size_t>(input_size);
  extent = (extent + 1) / 2;  // stem
  for (int l = 0; l < kLevels; ++l) {
    extent = (extent + 1) / 2;
    out.push_back({extent, extent});
  }
  return out;
}

void ModelConfig::validate() const {
  DRNET_CHECK(input_size >= 16, "input size must be >= 16, got ", input_size);
  DRNET_CHECK(input_channels == 1 || input_channels == 3, "input channels must be 1 or 3");
  DRNET_CHECK(channels.size() == kLevels, "need 4 backbone stage widths, got ", channels.size());
  DRNET_CHECK(strides == std::vector<int>({4, 8, 16, 32}),
              "backbone stages produce strides 4,8,16,32; got ", join_ints(strides));
  DRNET_CHECK(anchor_scales.size() == kLevels, "need 4 anchor scales, got ", anchor_scales.size());
  DRNET_CHECK(!ratios.empty(), "need at least one aspect ratio");
  DRNET_CHECK(num_classes >= 1, "need at least one object class");
  DRNET_CHECK(odm_channels >= 1, "odm channels must be positive");
  for (int c : channels) DRNET_CHECK(c >= 1, "stage widths must be positive");
  DRNET_CHECK(coding.center_variance > 0 && coding.size_variance > 0,
              "coding variances must be positive");
  head.validate();
  if (is_temporal(variant)) {
    DRNET_CHECK(offset_source != OffsetSource::Feature,
                "temporal variants derive offsets from anchor offsets only");
  }
}

std::vector<std::string> ModelConfig::keys() {
  return {"input_size",     "input_channels",  "channels",       "odm_channels",
          "strides",        "anchor_scales",   "ratios",         "num_classes",
          "head_kernels",   "head_dilations",  "variant",        "offset_source",
          "deformable_head", "refined_anchor_grad", "clip_refined_anchors", "tie_rg_rd",
          "zero_init_refinement", "center_variance", "size_variance"};
}

KeyValues ModelConfig::to_key_values() const {
  KeyValues kv;
  kv.set("input_size", std::to_string(input_size));
  kv.set("input_channels", std::to_string(input_channels));
  kv.set("channels", join_ints(channels));
  kv.set("odm_channels", std::to_string(odm_channels));
  kv.set("strides", join_ints(strides));
  kv.set("anchor_scales", join_doubles(anchor_scales));
  kv.set("ratios", join_doubles(ratios));
  kv.set("num_classes", std::to_string(num_classes));
  std::vector<int> kernels, dilations;
  for (const auto& p : head.paths) {
    kernels.push_back(p.kernel);
    dilations.push_back(p.dilation);
  }
  kv.set("head_kernels", join_ints(kernels));
  kv.set("head_dilations", join_ints(dilations));
  kv.set("variant", to_string(variant));
  kv.set("offset_source", to_string(offset_source));
  kv.set("deformable_head", deformable_head ? "true" : "false");
  kv.set("refined_anchor_grad", refined_anchor_grad ? "true" : "false");
  kv.set("clip_refined_anchors", clip_refined_anchors ? "true" : "false");
  kv.set("tie_rg_rd", tie_rg_rd ? "true" : "false");
  kv.set("zero_init_refinement", zero_init_refinement ? "true" : "false");
  kv.set("center_variance", format_double(coding.center_variance));
  kv.set("size_variance", format_double(coding.size_variance));
  return kv;
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  c.input_size = static_cast<int>(kv.get_int("input_size", c.input_size));
  c.input_channels = static_cast<int>(kv.get_int("input_channels", c.input_channels));
  c.channels = kv.get_int_list("channels", c.channels);
  c.odm_channels = static_cast<int>(kv.get_int("odm_channels", c.odm_channels));
  c.strides = kv.get_int_list("strides", c.strides);
  c.anchor_scales = kv.get_double_list("anchor_scales", c.anchor_scales);
  c.ratios = kv.get_double_list("ratios", c.ratios);
  c.num_classes = static_cast<int>(kv.get_int("num_classes", c.num_classes));
  if (kv.has("head_kernels") || kv.has("head_dilations")) {
    const auto kernels = kv.get_int_list("head_kernels", {3, 5});
    const auto dilations = kv.get_int_list("head_dilations", std::vector<int>(kernels.size(), 1));
    DRNET_CHECK(kernels.size() == dilations.size(), "head_kernels and head_dilations differ in length");
    c.head.paths.clear();
    for (std::size_t i = 0; i < kernels.size(); ++i) c.head.paths.push_back({kernels[i], dilations[i]});
  }
  c.variant = parse_variant(kv.get_or("variant", to_string(c.variant)));
  c.offset_source = parse_offset_source(kv.get_or("offset_source", to_string(c.offset_source)));
  c.deformable_head = kv.get_bool("deformable_head", c.deformable_head);
  c.refined_anchor_grad = kv.get_bool("refined_anchor_grad", c.refined_anchor_grad);
  c.clip_refined_anchors = kv.get_bool("clip_refined_anchors", c.clip_refined_anchors);
  c.tie_rg_rd = kv.get_bool("tie_rg_rd", c.tie_rg_rd);
  c.zero_init_refinement = kv.get_bool("zero_init_refinement", c.zero_init_refinement);
  c.coding.center_variance = kv.get_double("center_variance", c.coding.center_variance);
  c.coding.size_variance = kv.get_double("size_variance", c.coding.size_variance);
  c.validate();
  return c;
}

void Model::add_conv(const std::string& name, int out, int in, int kernel, int init,
                     std::uint64_t seed) {
  Tensor w({static_cast<std::size_t>(out), static_cast<std::size_t>(in),
            static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)});
  if (init != kZero) {
    std::mt19937_64 rng(seed ^ fnv1a(name));
    const double fan_in = static_cast<double>(in) * kernel * kernel;
    const double stddev = init == kHe ? std::sqrt(2.0 / fan_in) : 0.01;
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : w.values()) v = dist(rng);
  }
  for (auto [suffix, t] : {std::pair<const char*, Tensor>{".weight", std::move(w)},
                           {".bias", Tensor({static_cast<std::size_t>(out)}, 0.0)}}) {
    const std::string full = name + suffix;
    DRNET_CHECK(!index_.count(full), "duplicate parameter ", full);
    index_[full] = params_.size();
    params_.emplace_back(full, Var::parameter(std::move(t)));
  }
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  const auto shapes = config.level_shapes();
  m.anchors_ = generate_anchors(shapes, config.strides, config.anchor_scales, config.ratios);

  const int a = static_cast<int>(config.anchors_per_cell());
  const int cls = config.num_classes + 1;
  const int d = config.odm_channels;
  const auto& ch = config.channels;
  const bool temporal = is_temporal(config.variant);
  const int refine_init = config.zero_init_refinement ? kZero : kHead;
  const int offset_init = kZero;

  const auto add_backbone = [&](const std::string& prefix) {
    m.add_conv(prefix + "backbone.stem", ch[0], config.input_channels, 3, kHe, seed);
    for (int s = 0; s < kLevels; ++s) {
      const std::string stage = prefix + "backbone.stage" + std::to_string(s + 1);
      const int in = s == 0 ? ch[0] : ch[s - 1];
      m.add_conv(stage + ".down", ch[s], in, 3, kHe, seed);
      m.add_conv(stage + ".conv", ch[s], ch[s], 3, kHe, seed);
    }
  };
  const auto add_fpn = [&](const std::string& prefix) {
    for (int l = 0; l < kLevels; ++l) {
      m.add_conv(level_name(prefix + "fpn.lateral", l), d, ch[l], 1, kHe, seed);
      m.add_conv(level_name(prefix + "fpn.smooth", l), d, d, 3, kHe, seed);
    }
  };
  const auto add_arm = [&](const std::string& prefix) {
    for (int l = 0; l < kLevels; ++l) {
      m.add_conv(level_name(prefix + "arm", l), 4 * a, ch[l], 3, refine_init, seed);
    }
  };
  const auto add_offsets = [&](const std::string& prefix) {
    for (int l = 0; l < kLevels; ++l) {
      for (std::size_t p = 0; p < config.head.size(); ++p) {
        const int taps = config.head.paths[p].taps();
        if (config.offset_source == OffsetSource::Feature && config.variant == Variant::DRNet) {
          m.add_conv(path_name(prefix + "fr", l, p), 2 * taps, d, 3, offset_init, seed);
        } else {
          m.add_conv(path_name(prefix + "fr", l, p), 2 * taps, 4 * a, 1, offset_init, seed);
        }
      }
    }
  };
  const auto add_heads = [&](const std::string& prefix) {
    for (int l = 0; l < kLevels; ++l) {
      for (std::size_t p = 0; p < config.head.size(); ++p) {
        const int k = config.head.paths[p].kernel;
        const std::string base = path_name(prefix + "odm", l, p);
        m.add_conv(base + ".local", 4 * a, d, k, kHead, seed);
        m.add_conv(base + ".conf", cls * a, d, k, kHead, seed);
      }
    }
  };

  if (!temporal) {
    add_backbone("");
    if (has_arm(config.variant)) add_arm("");
    add_fpn("");
    if (has_offsets(config)) add_offsets("");
    add_heads("");
  } else {
    add_backbone("rg.");
    add_arm("rg.");
    if (has_offsets(config)) add_offsets("rg.");
    if (!config.tie_rg_rd) add_backbone("rd.");
    add_fpn("rd.");
    add_heads("rd.");
  }
  return m;
}

Model Model::clone() const {
  Model m;
  m.config_ = config_;
  m.anchors_ = anchors_;
  m.index_ = index_;
  m.step = step;
  for (const auto& [name, v] : params_) m.params_.emplace_back(name, Var(v.value(), v.requires_grad()));
  return m;
}

std::vector<Var> Model::parameter_vars() const {
  std::vector<Var> out;
  for (const auto& [name, v] : params_) out.push_back(v);
  return out;
}

const Var& Model::param(const std::string& name) const {
  const auto it = index_.find(name);
  DRNET_CHECK(it != index_.end(), "model has no parameter '", name, "'");
  return params_[it->second].second;
}

ConvWeights Model::conv(const std::string& name) const {
  return ConvWeights{param(name + ".weight"), param(name + ".bias")};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().numel();
  return n;
}

NamedTensors Model::state() const {
  NamedTensors out;
  for (const auto& [name, v] : params_) out.emplace_back(name, v.value());
  return out;
}

void Model::load_state(const NamedTensors& tensors) {
  std::set<std::string> seen;
  for (const auto& [name, t] : tensors) {
    DRNET_CHECK(seen.insert(name).second, "checkpoint lists parameter '", name, "' twice");
    const auto it = index_.find(name);
    DRNET_CHECK(it != index_.end(), "checkpoint parameter '", name, "' is not part of the model");
    Var& v = params_[it->second].second;
    DRNET_CHECK(v.shape() == t.shape(), "checkpoint parameter '", name, "' has shape ",
                shape_str(t.shape()), ", model expects ", shape_str(v.shape()));
  }
  DRNET_CHECK(seen.size() == params_.size(), "checkpoint holds ", seen.size(), " of ",
              params_.size(), " model parameters");
  for (const auto& [name, t] : tensors) params_[index_.at(name)].second.mutable_value() = t;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const auto conv = [](std::size_t out, std::size_t in, std::size_t k) { return out * in * k * k + out; };
  const std::size_t a = c.anchors_per_cell();
  const std::size_t cls = static_cast<std::size_t>(c.num_classes) + 1;
  const std::size_t d = c.odm_channels;
  std::size_t backbone = conv(c.channels[0], c.input_channels, 3);
  for (int s = 0; s < kLevels; ++s) {
    const std::size_t in = s == 0 ? c.channels[0] : c.channels[s - 1];
    backbone += conv(c.channels[s], in, 3) + conv(c.channels[s], c.channels[s], 3);
  }
  std::size_t fpn = 0, arm = 0, offsets = 0, heads = 0;
  for (int l = 0; l < kLevels; ++l) {
    fpn += conv(d, c.channels[l], 1) + conv(d, d, 3);
    arm += conv(4 * a, c.channels[l], 3);
    for (const auto& p : c.head.paths) {
      const std::size_t k = p.kernel;
      heads += conv(4 * a, d, k) + conv(cls * a, d, k);
      offsets += c.offset_source == OffsetSource::Feature && c.variant == Variant::DRNet
                     ? conv(2 * k * k, d, 3)
                     : conv(2 * k * k, 4 * a, 1);
    }
  }
  const bool with_offsets = has_offsets(c);
  switch (c.variant) {
    case Variant::SSD4s: return backbone + fpn + heads;
    case Variant::DRNet: return backbone + arm + fpn + heads + (with_offsets ? offsets : 0);
    case Variant::TRNet:
    case Variant::TDRNet:
      return backbone * (c.tie_rg_rd ? 1 : 2) + arm + fpn + heads + (with_offsets ? offsets : 0);
  }
  return 0;
}

ForwardResult forward_drnet(Tape& tape, const Model& m, const Var& images) {
  const ModelConfig& c = m.config();
  DRNET_CHECK(!is_temporal(c.variant), "forward_drnet on temporal variant ", to_string(c.variant));
  check_images(m, images);
  const auto feats = backbone(tape, m, "", images);
  ForwardResult r;
  r.state.ar = has_arm(c.variant) ? arm(tape, m, "", feats) : std::vector<Var>(kLevels);
  const auto odm = top_down(tape, m, "", feats);
  const bool deformable = deformable_rd(c);
  for (int l = 0; l < kLevels; ++l) {
    r.state.offsets.push_back(level_offsets(tape, m, "", l, r.state.ar[l], odm[l]));
    r.outputs.push_back(multi_head_detect(tape, odm[l], r.state.ar[l], r.state.offsets[l], c.head,
                                          path_weights(m, "", l), m.anchors().level(l),
                                          c.anchors_per_cell(), c.coding, deformable));
  }
  return r;
}

RefinementState forward_rg(Tape& tape, const Model& m, const Var& images) {
  DRNET_CHECK(is_temporal(m.config().variant), "forward_rg needs a temporal variant, model is ",
              to_string(m.config().variant));
  check_images(m, images);
  const std::string prefix = head_prefix(m, false);
  const auto feats = backbone(tape, m, backbone_prefix(m, false), images);
  RefinementState s;
  s.ar = arm(tape, m, prefix, feats);
  for (int l = 0; l < kLevels; ++l) s.offsets.push_back(level_offsets(tape, m, prefix, l, s.ar[l], Var()));
  return s;
}

std::vector<DetectionOutput> forward_rd(Tape& tape, const Model& m, const Var& images,
                                        const RefinementState& state) {
  const ModelConfig& c = m.config();
  DRNET_CHECK(is_temporal(c.variant), "forward_rd needs a temporal variant, model is ",
              to_string(c.variant));
  check_images(m, images);
  const auto shapes = c.level_shapes();
  DRNET_CHECK(state.ar.size() == kLevels, "refinement state has ", state.ar.size(),
              " levels, RD expects ", kLevels);
  const std::size_t batch = images.shape()[0];
  for (int l = 0; l < kLevels; ++l) {
    const Shape want{batch, 4 * c.anchors_per_cell(), shapes[l].height, shapes[l].width};
    DRNET_CHECK(state.ar[l].defined() && state.ar[l].shape() == want, "refinement state level ", l,
                ": anchor offsets ",
                state.ar[l].defined() ? shape_str(state.ar[l].shape()) : std::string("<none>"),
                ", expected ", shape_str(want));
  }
  const bool deformable = deformable_rd(c);
  if (deformable) {
    DRNET_CHECK(state.offsets.size() == kLevels, "refinement state lacks feature offsets");
    for (int l = 0; l < kLevels; ++l) {
      DRNET_CHECK(state.offsets[l].empty() || state.offsets[l].size() == c.head.size(),
                  "refinement state level ", l, " has ", state.offsets[l].size(),
                  " offset maps for ", c.head.size(), " paths");
    }
  }
  const auto feats = backbone(tape, m, backbone_prefix(m, true), images);
  const auto odm = top_down(tape, m, "rd.", feats);
  std::vector<DetectionOutput> out;
  for (int l = 0; l < kLevels; ++l) {
    const std::vector<Var> none;
    const std::vector<Var>& offsets = deformable ? state.offsets[l] : none;
    out.push_back(multi_head_detect(tape, odm[l], state.ar[l], offsets, c.head,
                                    path_weights(m, "rd.", l), m.anchors().level(l),
                                    c.anchors_per_cell(), c.coding, deformable));
  }
  return out;
}

ForwardResult forward(Tape& tape, const Model& m, const Var& images) {
  if (!is_temporal(m.config().variant)) return forward_drnet(tape, m, images);
  ForwardResult r;
  r.state = forward_rg(tape, m, images);
  r.outputs = forward_rd(tape, m, images, r.state);
  return r;
}

std::vector<std::vector<Var>> refine_offsets(Tape& tape, const Model& m, std::span<const Var> ar) {
  const ModelConfig& c = m.config();
  std::vector<std::vector<Var>> out(ar.size());
  if (!has_offsets(c) || c.offset_source == OffsetSource::Feature) return out;
  DRNET_CHECK(ar.size() == kLevels, "refine_offsets: expected 4 levels");
  const std::string prefix = head_prefix(m, false);
  for (int l = 0; l < kLevels; ++l) out[l] = level_offsets(tape, m, prefix, l, ar[l], Var());
  return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& stem) {
  save_weights(stem.string() + ".afw", model.state());
  KeyValues kv = model.config().to_key_values();
  kv.set("step", std::to_string(model.step));
  kv.save(stem.string() + ".cfg");
}

Model load_checkpoint(const std::filesystem::path& stem) {
  const std::filesystem::path cfg = stem.string() + ".cfg";
  const std::filesystem::path afw = stem.string() + ".afw";
  DRNET_CHECK(std::filesystem::exists(cfg) && std::filesystem::exists(afw), "missing checkpoint ",
              stem.string(), " (.cfg/.afw)");
  KeyValues kv = KeyValues::load(cfg);
  const auto step = static_cast<std::uint64_t>(kv.get_int("step", 0));
  KeyValues model_kv;
  for (const auto& [k, v] : kv.entries()) {
    if (k != "step") model_kv.set(k, v);
  }
  std::vector<std::string> keys = ModelConfig::keys();
  model_kv.require_known(keys);
  Model m = Model::build(ModelConfig::from_key_values(model_kv), 0);
  m.load_state(load_weights(afw));
  m.step = step;
  return m;
}

}  // namespace drnet
