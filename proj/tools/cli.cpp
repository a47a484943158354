#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "drnet/checkpoint.hpp"
#include "drnet/config.hpp"
#include "drnet/deform.hpp"
#include "drnet/evaluation.hpp"
#include "drnet/model.hpp"
#include "drnet/pipeline.hpp"
#include "drnet/synthetic.hpp"
#include "drnet/temporal.hpp"
#include "drnet/training.hpp"

namespace drnet::cli {

namespace fs = std::filesystem;

namespace {

struct Command {
  std::string name;
  std::string help;
  KeyValues defaults;  // every valid key, with its default value
  std::function<void(const KeyValues&, std::ostream&)> run;
};

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

fs::path output_dir(const KeyValues& kv) {
  const std::string out = kv.get_or("out", "");
  DRNET_CHECK(!out.empty(), "--out is required");
  fs::create_directories(out);
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  DRNET_CHECK(os.good(), "cannot write ", path.string());
  return os;
}

PostprocessConfig post_config(const KeyValues& kv) {
  PostprocessConfig p;
  p.score_threshold = kv.get_double("score_threshold", p.score_threshold);
  p.nms_threshold = kv.get_double("nms_threshold", p.nms_threshold);
  const long long k = kv.get_int("top_k", static_cast<long long>(p.top_k));
  DRNET_CHECK(k >= 1, "top_k must be >= 1");
  p.top_k = static_cast<std::size_t>(k);
  return p;
}

void add_post_keys(KeyValues& kv) {
  const PostprocessConfig p;
  kv.set("score_threshold", format_double(p.score_threshold));
  kv.set("nms_threshold", format_double(p.nms_threshold));
  kv.set("top_k", std::to_string(p.top_k));
}

void add_stream_keys(KeyValues& kv) {
  kv.set("k", "1");
  kv.set("e", "1");
  kv.set("offsets_from_soft", "false");
}

StreamOptions stream_options(const KeyValues& kv) {
  StreamOptions so;
  so.schedule.k = static_cast<int>(kv.get_int("k", 1));
  so.schedule.e = kv.get_double("e", 1.0);
  so.schedule.validate();
  so.offsets_from_soft = kv.get_bool("offsets_from_soft", false);
  so.post = post_config(kv);
  return so;
}

struct Dataset {
  bool videos = false;
  std::vector<LabeledImage> images;
  std::vector<VideoClip> clips;

  FrameTruth truth() const { return videos ? clip_truth(clips) : image_truth(images); }
  /// Every frame in global frame order.
  std::vector<LabeledImage> frames() const {
    if (!videos) return images;
    std::vector<LabeledImage> out;
    for (const auto& c : clips) out.insert(out.end(), c.frames.begin(), c.frames.end());
    return out;
  }
};

/// data may be an image set, a video set, or a gen-data directory holding
/// images/ and videos/; source picks one of the latter.
Dataset load_data(const KeyValues& kv) {
  const fs::path dir = kv.get("data");
  DRNET_CHECK(!dir.empty(), "--data is required");
  const std::string source = kv.get("source");
  DRNET_CHECK(source == "auto" || source == "images" || source == "videos",
              "source must be auto, images or videos, got '", source, "'");
  Dataset d;
  if (fs::exists(dir / "annotations.jsonl")) {
    DRNET_CHECK(source != "videos", dir.string(), " is an image set");
    d.images = read_image_set(dir);
  } else if (fs::exists(dir / "manifest.json")) {
    DRNET_CHECK(source != "images", dir.string(), " is a video set");
    d.videos = true;
    d.clips = read_video_set(dir);
  } else if (source != "videos" && fs::exists(dir / "images" / "annotations.jsonl")) {
    d.images = read_image_set(dir / "images");
  } else if (source != "images" && fs::exists(dir / "videos" / "manifest.json")) {
    d.videos = true;
    d.clips = read_video_set(dir / "videos");
  } else {
    throw Error(detail::concat("no ", source == "auto" ? "image or video" : source, " set under ",
                               dir.string()));
  }
  return d;
}

void check_input(const Model& m, const LabeledImage& sample) {
  const Shape& s = sample.image.shape();
  const auto& c = m.config();
  DRNET_CHECK(s[0] == static_cast<std::size_t>(c.input_channels) &&
                  s[1] == static_cast<std::size_t>(c.input_size) && s[2] == s[1],
              "data images are ", shape_str(s), " but the model expects [", c.input_channels, ",",
              c.input_size, ",", c.input_size, "]");
}

// ---------------------------------------------------------------- gen-data

KeyValues gen_data_defaults() {
  const SceneSpec s;
  KeyValues kv;
  kv.set("seed", std::to_string(s.seed));
  kv.set("images", "200");
  kv.set("videos", "0");
  kv.set("frames", "32");
  kv.set("canvas", std::to_string(s.canvas));
  kv.set("min_objects", std::to_string(s.min_objects));
  kv.set("max_objects", std::to_string(s.max_objects));
  kv.set("min_size", std::to_string(s.min_size));
  kv.set("max_size", std::to_string(s.max_size));
  kv.set("max_velocity", std::to_string(s.max_velocity));
  kv.set("occlusion", s.occlusion ? "true" : "false");
  kv.set("noise", format_double(s.noise));
  kv.set("color", s.color ? "true" : "false");
  kv.set("bounce", s.bounce ? "true" : "false");
  return kv;
}

void gen_data(const KeyValues& kv, std::ostream& out) {
  SceneSpec s;
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  s.canvas = static_cast<int>(kv.get_int("canvas", s.canvas));
  s.min_objects = static_cast<int>(kv.get_int("min_objects", s.min_objects));
  s.max_objects = static_cast<int>(kv.get_int("max_objects", s.max_objects));
  s.min_size = static_cast<int>(kv.get_int("min_size", s.min_size));
  s.max_size = static_cast<int>(kv.get_int("max_size", s.max_size));
  s.max_velocity = static_cast<int>(kv.get_int("max_velocity", s.max_velocity));
  s.occlusion = kv.get_bool("occlusion", s.occlusion);
  s.noise = kv.get_double("noise", s.noise);
  s.color = kv.get_bool("color", s.color);
  s.bounce = kv.get_bool("bounce", s.bounce);
  s.validate();
  const long long images = kv.get_int("images", 0), videos = kv.get_int("videos", 0);
  const long long frames = kv.get_int("frames", 32);
  DRNET_CHECK(images >= 0 && videos >= 0 && images + videos > 0, "nothing to generate");
  const fs::path dir = output_dir(kv);
  if (images > 0) write_image_set(dir / "images", generate_images(s, static_cast<std::size_t>(images)));
  if (videos > 0) {
    DRNET_CHECK(frames >= 1, "frames must be >= 1");
    write_video_set(dir / "videos",
                    generate_videos(s, static_cast<std::size_t>(videos), static_cast<int>(frames)));
  }
  out << "wrote " << images << " images, " << videos << " videos to " << dir.string() << "\n";
}

// ------------------------------------------------------------------- train

KeyValues train_defaults() {
  KeyValues kv = ModelConfig{}.to_key_values();
  kv.merge(TrainConfig{}.to_key_values());
  kv.set("data", "");
  kv.set("source", "images");
  return kv;
}

void train_cmd(const KeyValues& kv, std::ostream& out) {
  KeyValues model_kv, train_kv;
  const auto model_keys = ModelConfig::keys(), train_keys = TrainConfig::keys();
  for (const auto& [k, v] : kv.entries()) {
    if (std::find(model_keys.begin(), model_keys.end(), k) != model_keys.end()) model_kv.set(k, v);
    if (std::find(train_keys.begin(), train_keys.end(), k) != train_keys.end()) train_kv.set(k, v);
  }
  const ModelConfig mc = ModelConfig::from_key_values(model_kv);
  const TrainConfig tc = TrainConfig::from_key_values(train_kv);
  const Dataset data = load_data(kv);
  const auto frames = data.frames();
  DRNET_CHECK(!frames.empty(), "no training images");
  const fs::path dir = output_dir(kv);
  // One seed drives initialization and batch order.
  Model model = Model::build(mc, tc.seed);
  check_input(model, frames[0]);
  std::ofstream metrics = open_out(dir / "metrics.csv");
  write_metrics_header(metrics);
  const std::size_t report = std::max<std::size_t>(1, tc.steps / 10);
  train(model, frames, tc, [&](const MetricsRow& r) {
    write_metrics_row(metrics, r);
    if (r.step % report == 0 || r.step + 1 == tc.steps) {
      out << "step " << r.step << " loss " << format_double(r.loss.total) << " lr "
          << format_double(r.lr) << "\n";
    }
  });
  save_checkpoint(model, dir / "model");
  out << "saved " << (dir / "model").string() << ".{afw,cfg} (" << model.parameter_count()
      << " weights)\n";
}

// -------------------------------------------------------------------- eval

KeyValues eval_defaults() {
  KeyValues kv;
  kv.set("data", "");
  kv.set("source", "auto");
  kv.set("checkpoint", "");
  kv.set("detections", "");
  kv.set("num_classes", "3");
  kv.set("iou_threshold", "0.5");
  add_post_keys(kv);
  add_stream_keys(kv);
  return kv;
}

std::vector<Detection> run_detection(const Model& model, const Dataset& data, const KeyValues& kv) {
  const StreamOptions so = stream_options(kv);
  if (data.videos) {
    if (!data.clips.empty() && !data.clips[0].frames.empty()) check_input(model, data.clips[0].frames[0]);
    return detect_clips(model, data.clips, so);
  }
  if (!data.images.empty()) check_input(model, data.images[0]);
  return detect_images(model, data.images, so.post);
}

void eval_cmd(const KeyValues& kv, std::ostream& out) {
  const std::string ckpt = kv.get("checkpoint"), dets = kv.get("detections");
  DRNET_CHECK(ckpt.empty() != dets.empty(), "eval needs exactly one of --checkpoint and --detections");
  const Dataset data = load_data(kv);
  const fs::path dir = output_dir(kv);
  std::vector<Detection> detections;
  int classes = static_cast<int>(kv.get_int("num_classes", 3));
  if (!ckpt.empty()) {
    const Model model = load_checkpoint(ckpt);
    classes = model.config().num_classes;
    detections = run_detection(model, data, kv);
    std::ofstream os = open_out(dir / "detections.jsonl");
    write_detections_jsonl(os, detections);
  } else {
    std::ifstream is(dets, std::ios::binary);
    DRNET_CHECK(is.good(), "cannot read detections ", dets);
    detections = read_detections_jsonl(is);
  }
  const Evaluation ev = evaluate(detections, data.truth(), classes, kv.get_double("iou_threshold", 0.5));
  std::ofstream csv = open_out(dir / "eval.csv");
  csv << "class,ground_truths,ap\n";
  for (const auto& c : ev.classes) {
    csv << c.label << ',' << c.ground_truths << ',' << (c.ap ? format_double(*c.ap) : "") << '\n';
    std::ofstream pr = open_out(dir / ("pr_class" + std::to_string(c.label) + ".csv"));
    write_pr_csv(pr, c);
  }
  csv << "mAP,," << format_double(ev.map) << '\n';
  std::ofstream svg = open_out(dir / "pr.svg");
  write_pr_svg(svg, ev.classes);
  for (const auto& w : ev.warnings) out << "warning: " << w << "\n";
  out << "mAP " << format_double(ev.map) << " over " << data.truth().size() << " frames, "
      << detections.size() << " detections\n";
}

// ------------------------------------------------------------------ detect

KeyValues detect_defaults() {
  KeyValues kv;
  kv.set("data", "");
  kv.set("source", "auto");
  kv.set("checkpoint", "");
  add_post_keys(kv);
  add_stream_keys(kv);
  return kv;
}

void detect_cmd(const KeyValues& kv, std::ostream& out) {
  DRNET_CHECK(!kv.get("checkpoint").empty(), "--checkpoint is required");
  const Model model = load_checkpoint(kv.get("checkpoint"));
  const Dataset data = load_data(kv);
  const fs::path dir = output_dir(kv);
  const auto detections = run_detection(model, data, kv);
  std::ofstream os = open_out(dir / "detections.jsonl");
  write_detections_jsonl(os, detections);
  out << detections.size() << " detections over " << data.truth().size() << " frames\n";
}

// ------------------------------------------------------------------- sweep

KeyValues sweep_defaults() {
  const SweepOptions so;
  KeyValues kv;
  kv.set("data", "");
  kv.set("source", "videos");
  kv.set("checkpoint", "");
  kv.set("k", join_ints(so.ks));
  kv.set("e", join_doubles(so.es));
  kv.set("timing_repeats", std::to_string(so.timing_repeats));
  kv.set("offsets_from_soft", "false");
  add_post_keys(kv);
  return kv;
}

void sweep_cmd(const KeyValues& kv, std::ostream& out) {
  DRNET_CHECK(!kv.get("checkpoint").empty(), "--checkpoint is required");
  const Model model = load_checkpoint(kv.get("checkpoint"));
  const Dataset data = load_data(kv);
  DRNET_CHECK(data.videos, "sweep needs a video set");
  DRNET_CHECK(!data.clips.empty() && !data.clips[0].frames.empty(), "empty video set");
  check_input(model, data.clips[0].frames[0]);
  SweepOptions so;
  so.ks = kv.get_int_list("k", so.ks);
  so.es = kv.get_double_list("e", so.es);
  so.timing_repeats = static_cast<int>(kv.get_int("timing_repeats", 1));
  so.offsets_from_soft = kv.get_bool("offsets_from_soft", false);
  so.post = post_config(kv);
  const auto rows = sweep(model, data.clips, so);
  const fs::path dir = output_dir(kv);
  std::ofstream csv = open_out(dir / "sweep.csv");
  write_sweep_csv(csv, rows);
  std::ofstream svg = open_out(dir / "sweep.svg");
  write_sweep_svg(svg, rows, to_string(model.config().variant));
  write_sweep_csv(out, rows);
}

// ---------------------------------------------------------- export-offsets

KeyValues export_defaults() {
  KeyValues kv;
  kv.set("data", "");
  kv.set("source", "auto");
  kv.set("checkpoint", "");
  kv.set("index", "0");
  return kv;
}

void export_cmd(const KeyValues& kv, std::ostream& out) {
  DRNET_CHECK(!kv.get("checkpoint").empty(), "--checkpoint is required");
  const Model model = load_checkpoint(kv.get("checkpoint"));
  const auto frames = load_data(kv).frames();
  const long long index = kv.get_int("index", 0);
  DRNET_CHECK(index >= 0 && static_cast<std::size_t>(index) < frames.size(), "index ", index,
              " is outside the ", frames.size(), " frames");
  const LabeledImage& img = frames[static_cast<std::size_t>(index)];
  check_input(model, img);
  Tape tape(false);
  const ForwardResult fwd = forward(tape, model, Var(stack_images({&img.image})));
  const ModelConfig& c = model.config();
  std::vector<SamplingCenter> centers;
  for (std::size_t l = 0; l < fwd.state.offsets.size(); ++l) {
    for (std::size_t p = 0; p < fwd.state.offsets[l].size(); ++p) {
      const Var& off = fwd.state.offsets[l][p];
      if (!off.defined()) continue;
      const auto part = sampling_centers(off.value(), 0, c.head.paths[p].kernel, c.strides[l], l, p);
      centers.insert(centers.end(), part.begin(), part.end());
    }
  }
  DRNET_CHECK(!centers.empty(), "model ", to_string(c.variant), " (offset_source ",
              to_string(c.offset_source), ") produces no anchor-driven sampling offsets");
  const fs::path dir = output_dir(kv);
  std::ofstream csv = open_out(dir / "sampling_centers.csv");
  write_sampling_centers_csv(csv, centers);
  out << centers.size() << " sampling centers of " << img.name << "\n";
}

std::vector<Command> commands() {
  return {
      {"gen-data", "Generate a synthetic image and/or video set", gen_data_defaults(), gen_data},
      {"train", "Train a model on an image set", train_defaults(), train_cmd},
      {"eval", "Evaluate a checkpoint or a detections file", eval_defaults(), eval_cmd},
      {"detect", "Write detections of a checkpoint on images or videos", detect_defaults(), detect_cmd},
      {"sweep", "Key-frame period / soft coefficient grid of a temporal model", sweep_defaults(),
       sweep_cmd},
      {"export-offsets", "Write refined sampling centers of one image", export_defaults(), export_cmd},
  };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"drnet: dual refinement single-stage detector experiments"};
  app.require_subcommand(1);
  auto cmds = commands();

  struct Parsed {
    CLI::App* sub = nullptr;
    std::string config;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;
    bool no_feature_refine = false, no_deform_head = false, single_head = false, multi_head = false;
  };
  std::vector<Parsed> parsed(cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    Parsed& p = parsed[i];
    p.sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    p.sub->add_option("--config", p.config, "key = value file; flags override it");
    p.sub->add_option("--set", p.sets, "extra key=value overrides");
    p.sub->add_option("--out", p.flags["out"], "run directory");
    for (const auto& [key, value] : cmds[i].defaults.entries()) {
      p.sub->add_option(flag_name(key), p.flags[key], "default: " + value);
    }
    if (cmds[i].name == "train") {
      p.sub->add_flag("--no-feature-refine", p.no_feature_refine, "zero sampling offsets");
      p.sub->add_flag("--no-deform-head", p.no_deform_head, "plain convolution heads");
      auto* single = p.sub->add_flag("--single-head", p.single_head, "one 3x3 detection path");
      auto* multi = p.sub->add_flag("--multi-head", p.multi_head, "3x3 and 5x5 detection paths");
      single->excludes(multi);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    for (std::size_t i = 0; i < cmds.size(); ++i) {
      Parsed& p = parsed[i];
      if (!p.sub->parsed()) continue;
      std::vector<std::string> valid{"out"};
      for (const auto& [key, value] : cmds[i].defaults.entries()) valid.push_back(key);
      KeyValues resolved = cmds[i].defaults;
      if (!p.config.empty()) {
        const KeyValues file = KeyValues::load(p.config);
        file.require_known(valid);
        resolved.merge(file);
      }
      KeyValues overrides;
      for (const auto& [key, value] : p.flags) {
        if (p.sub->count(flag_name(key)) > 0) overrides.set(key, value);
      }
      for (const auto& s : p.sets) {
        const auto eq = s.find('=');
        DRNET_CHECK(eq != std::string::npos, "--set expects key=value, got '", s, "'");
        overrides.set(s.substr(0, eq), s.substr(eq + 1));
      }
      if (p.no_feature_refine) overrides.set("offset_source", "none");
      if (p.no_deform_head) overrides.set("deformable_head", "false");
      if (p.single_head) {
        overrides.set("head_kernels", "3");
        overrides.set("head_dilations", "1");
      }
      if (p.multi_head) {
        overrides.set("head_kernels", "3,5");
        overrides.set("head_dilations", "1,1");
      }
      overrides.require_known(valid);
      resolved.merge(overrides);
      const fs::path dir = output_dir(resolved);
      // Everything but the run directory itself, so runs compare bytewise;
      // --config dir/config.cfg --out other reproduces the run.
      KeyValues echoed;
      for (const auto& [key, value] : resolved.entries()) {
        if (key != "out") echoed.set(key, value);
      }
      echoed.save(dir / "config.cfg");
      cmds[i].run(resolved, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace drnet::cli
