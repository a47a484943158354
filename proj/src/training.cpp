#include "drnet/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace drnet {

MatchResult match(std::span<const Box> anchors, std::span<const GroundTruth> gts, double threshold) {
  const std::size_t t = anchors.size();
  const std::size_t g = gts.size();
  MatchResult r;
  r.labels.assign(t, 0);
  r.matched_gt.assign(t, -1);
  if (g == 0 || t == 0) return r;

  std::vector<double> iou(g * t);
  for (std::size_t j = 0; j < g; ++j) {
    for (std::size_t i = 0; i < t; ++i) iou[j * t + i] = jaccard(gts[j].box, anchors[i]);
  }

  std::vector<bool> gt_done(g, false);
  for (std::size_t round = 0; round < std::min(g, t); ++round) {
    double best = -1.0;
    std::size_t best_a = 0, best_g = 0;
    for (std::size_t i = 0; i < t; ++i) {
      if (r.matched_gt[i] >= 0) continue;
      for (std::size_t j = 0; j < g; ++j) {
        if (gt_done[j]) continue;
        if (iou[j * t + i] > best) {
          best = iou[j * t + i];
          best_a = i;
          best_g = j;
        }
      }
    }
    gt_done[best_g] = true;
    r.matched_gt[best_a] = static_cast<int>(best_g);
  }

  std::vector<bool> claimed(t);
  for (std::size_t i = 0; i < t; ++i) claimed[i] = r.matched_gt[i] >= 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (claimed[i]) continue;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t j = 0; j < g; ++j) {
      if (iou[j * t + i] > best) {
        best = iou[j * t + i];
        best_g = j;
      }
    }
    if (best > threshold) r.matched_gt[i] = static_cast<int>(best_g);
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (r.matched_gt[i] < 0) continue;
    r.labels[i] = gts[r.matched_gt[i]].label;
    ++r.positives;
  }
  return r;
}

std::vector<std::size_t> hard_negative_mine(std::span<const double> conf_loss,
                                            const MatchResult& match, int ratio) {
  DRNET_CHECK(ratio >= 1, "negative ratio must be >= 1, got ", ratio);
  DRNET_CHECK(conf_loss.size() == match.labels.size(), "hard_negative_mine: ", conf_loss.size(),
              " losses for ", match.labels.size(), " anchors");
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < match.labels.size(); ++i) {
    if (match.labels[i] == 0) negatives.push_back(i);
  }
  const std::size_t keep = std::min(negatives.size(), static_cast<std::size_t>(ratio) * match.positives);
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep),
                    negatives.end(), [&](std::size_t a, std::size_t b) {
                      if (conf_loss[a] != conf_loss[b]) return conf_loss[a] > conf_loss[b];
                      return a < b;
                    });
  negatives.resize(keep);
  std::sort(negatives.begin(), negatives.end());
  return negatives;
}

AnchorRows flatten_outputs(Tape& tape, const Model& model, const ForwardResult& fwd) {
  const std::size_t a = model.config().anchors_per_cell();
  const std::size_t classes = static_cast<std::size_t>(model.config().num_classes) + 1;
  std::vector<Var> ar, local, logits;
  for (std::size_t l = 0; l < fwd.outputs.size(); ++l) {
    local.push_back(anchor_rows(tape, fwd.outputs[l].local, a, 4));
    logits.push_back(anchor_rows(tape, fwd.outputs[l].logits, a, classes));
    if (l < fwd.state.ar.size() && fwd.state.ar[l].defined()) {
      ar.push_back(anchor_rows(tape, fwd.state.ar[l], a, 4));
    }
  }
  AnchorRows rows;
  rows.local = concat(tape, local, 1);
  rows.logits = concat(tape, logits, 1);
  if (!ar.empty()) {
    DRNET_CHECK(ar.size() == fwd.outputs.size(), "anchor offsets missing on some levels");
    rows.ar = concat(tape, ar, 1);
  }
  return rows;
}

std::vector<Box> reference_anchors(const Model& model, const ForwardResult& fwd, std::size_t n) {
  const ModelConfig& c = model.config();
  const BoxSet& anchors = model.anchors();
  std::vector<Box> out;
  out.reserve(anchors.size());
  for (std::size_t l = 0; l < anchors.levels(); ++l) {
    const bool refined = l < fwd.state.ar.size() && fwd.state.ar[l].defined();
    const auto boxes = refined_anchors(refined ? fwd.state.ar[l].value() : Tensor(), n,
                                       anchors.level(l), c.anchors_per_cell(), c.coding);
    out.insert(out.end(), boxes.begin(), boxes.end());
  }
  if (c.clip_refined_anchors) {
    const double size = c.input_size;
    for (Box& b : out) b = clip_box(b, size, size);
  }
  return out;
}

Var refined_targets(Tape& tape, const Var& ar, std::span<const Box> anchors,
                    std::span<const Box> gts, const OffsetCoding& coding) {
  const auto& s = ar.shape();
  DRNET_CHECK(s.size() == 2 && s[1] == 4 && s[0] == anchors.size() && s[0] == gts.size(),
              "refined_targets: ar ", shape_str(s), " with ", anchors.size(), " anchors and ",
              gts.size(), " boxes");
  const std::size_t m = s[0];
  const Tensor& x = ar.value();
  Tensor out({m, 4});
  // d(out)/d(ar) per row: t0/ar0, t0/ar2, t1/ar1, t1/ar3, t2/ar2, t3/ar3.
  std::vector<std::array<double, 6>> jac(m);
  for (std::size_t i = 0; i < m; ++i) {
    const BoxOffsets t{x[i * 4], x[i * 4 + 1], x[i * 4 + 2], x[i * 4 + 3]};
    const Box ref = decode(t, anchors[i], coding);
    const BoxOffsets e = encode(gts[i], ref, coding);
    for (std::size_t k = 0; k < 4; ++k) out[i * 4 + k] = e[k];
    const bool free_w = std::abs(t[2]) < kLogOffsetClamp;
    const bool free_h = std::abs(t[3]) < kLogOffsetClamp;
    const double vs = coding.size_variance;
    jac[i] = {-anchors[i].w / ref.w, free_w ? -e[0] * vs : 0.0, -anchors[i].h / ref.h,
              free_h ? -e[1] * vs : 0.0, free_w ? -1.0 : 0.0, free_h ? -1.0 : 0.0};
  }
  const bool track = tape.tracks(ar);
  Var result(std::move(out), track);
  if (track) {
    tape.push([ar, result, jac = std::move(jac), m]() {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      Tensor& d = ar.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const auto& j = jac[i];
        const double* gi = g.data() + i * 4;
        d[i * 4 + 0] += gi[0] * j[0];
        d[i * 4 + 1] += gi[1] * j[2];
        d[i * 4 + 2] += gi[0] * j[1] + gi[2] * j[4];
        d[i * 4 + 3] += gi[1] * j[3] + gi[3] * j[5];
      }
    });
  }
  return result;
}

namespace {

// Background cross entropy per anchor row of image n, from logit values.
std::vector<double> background_loss(const Tensor& logits, std::size_t n) {
  const std::size_t t = logits.extent(1);
  const std::size_t k = logits.extent(2);
  std::vector<double> out(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = logits.data() + (n * t + i) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    out[i] = mx + std::log(z) - row[0];
  }
  return out;
}

Var constant(std::vector<double> values, std::size_t rows, std::size_t cols) {
  return Var(Tensor({rows, cols}, std::move(values)));
}

Var smooth_l1_sum(Tape& tape, const Var& pred, const Var& target) {
  return sum(tape, smooth_l1(tape, sub(tape, pred, target)));
}

}  // namespace

LossBreakdown compute_loss(Tape& tape, const Model& model, const ForwardResult& fwd,
                           std::span<const std::vector<GroundTruth>> gts,
                           const LossOptions& options) {
  const ModelConfig& c = model.config();
  const AnchorRows rows = flatten_outputs(tape, model, fwd);
  const std::size_t batch = rows.local.shape()[0];
  const std::size_t t = rows.local.shape()[1];
  DRNET_CHECK(gts.size() == batch, "compute_loss: ", gts.size(), " label sets for batch of ", batch);
  DRNET_CHECK(t == model.anchors().size(), "compute_loss: ", t, " anchor rows for ",
              model.anchors().size(), " anchors");
  const bool has_ar = rows.ar.defined();
  const bool grad_through_ar = has_ar && c.refined_anchor_grad;
  DRNET_CHECK(!(grad_through_ar && c.clip_refined_anchors),
              "refined_anchor_grad cannot be combined with clip_refined_anchors");

  std::vector<std::size_t> arm_rows, odm_rows, conf_rows;
  std::vector<double> arm_targets, odm_targets;
  std::vector<Box> odm_anchors, odm_gts;
  std::vector<int> conf_classes;
  LossBreakdown loss;

  const auto& anchors = model.anchors().boxes;
  for (std::size_t n = 0; n < batch; ++n) {
    const auto& objects = gts[n];
    if (has_ar) {
      const MatchResult m = match(anchors, objects, options.match_threshold);
      loss.n_arm += m.positives;
      for (std::size_t i = 0; i < t; ++i) {
        if (m.matched_gt[i] < 0) continue;
        arm_rows.push_back(n * t + i);
        const BoxOffsets e = encode(objects[m.matched_gt[i]].box, anchors[i], c.coding);
        arm_targets.insert(arm_targets.end(), e.begin(), e.end());
      }
    }
    const std::vector<Box> reference = reference_anchors(model, fwd, n);
    const MatchResult m = match(reference, objects, options.match_threshold);
    loss.n_odm += m.positives;
    for (std::size_t i = 0; i < t; ++i) {
      if (m.matched_gt[i] < 0) continue;
      const Box& gt = objects[m.matched_gt[i]].box;
      odm_rows.push_back(n * t + i);
      if (grad_through_ar) {
        odm_anchors.push_back(anchors[i]);
        odm_gts.push_back(gt);
      } else {
        const BoxOffsets e = encode(gt, reference[i], c.coding);
        odm_targets.insert(odm_targets.end(), e.begin(), e.end());
      }
      conf_rows.push_back(n * t + i);
      conf_classes.push_back(m.labels[i]);
    }
    const auto bg = background_loss(rows.logits.value(), n);
    for (std::size_t i : hard_negative_mine(bg, m, options.negative_ratio)) {
      conf_rows.push_back(n * t + i);
      conf_classes.push_back(0);
      ++loss.negatives;
    }
  }

  Var total;
  const auto accumulate = [&](const Var& term, double scale) {
    const Var scaled = mul(tape, term, scale);
    total = total.defined() ? add(tape, total, scaled) : scaled;
  };
  if (!arm_rows.empty()) {
    const Var pred = gather_rows(tape, rows.ar, arm_rows);
    const Var l = smooth_l1_sum(tape, pred, constant(std::move(arm_targets), arm_rows.size(), 4));
    loss.loc_arm = l.value()[0];
    accumulate(l, 1.0 / static_cast<double>(loss.n_arm));
  }
  if (!odm_rows.empty()) {
    const Var pred = gather_rows(tape, rows.local, odm_rows);
    Var target;
    if (grad_through_ar) {
      target = refined_targets(tape, gather_rows(tape, rows.ar, odm_rows), odm_anchors, odm_gts,
                               c.coding);
    } else {
      target = constant(std::move(odm_targets), odm_rows.size(), 4);
    }
    const Var loc = smooth_l1_sum(tape, pred, target);
    const Var conf = sum(tape, cross_entropy(tape, gather_rows(tape, rows.logits, conf_rows),
                                             conf_classes));
    loss.loc_odm = loc.value()[0];
    loss.conf = conf.value()[0];
    accumulate(add(tape, loc, conf), 1.0 / static_cast<double>(loss.n_odm));
  }
  loss.value = total.defined() ? total : Var(Tensor({1}, 0.0));
  loss.total = loss.value.value()[0];
  DRNET_CHECK(std::isfinite(loss.total), "non-finite loss: L_loc_ARM=", loss.loc_arm,
              " L_loc_ODM=", loss.loc_odm, " L_conf=", loss.conf, " N_ARM=", loss.n_arm,
              " N_ODM=", loss.n_odm);
  return loss;
}

Sgd::Sgd(std::vector<Var> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const Var& p : params_) velocity_.emplace_back(p.shape(), 0.0);
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].mutable_value();
    Tensor& v = velocity_[i];
    const bool has_grad = params_[i].has_grad();
    for (std::size_t j = 0; j < w.numel(); ++j) {
      const double g = has_grad ? params_[i].grad()[j] : 0.0;
      v[j] = momentum_ * v[j] + g + weight_decay_ * w[j];
      w[j] -= lr * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (const Var& p : params_) p.zero_grad();
}

std::vector<std::string> TrainConfig::keys() {
  return {"steps",        "batch_size", "base_lr", "momentum",       "weight_decay",
          "warmup_steps", "hflip",      "seed",    "log_every",      "negative_ratio",
          "match_threshold"};
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv.set("steps", std::to_string(steps));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("base_lr", format_double(base_lr));
  kv.set("momentum", format_double(momentum));
  kv.set("weight_decay", format_double(weight_decay));
  kv.set("warmup_steps", std::to_string(warmup_steps));
  kv.set("hflip", hflip ? "true" : "false");
  kv.set("seed", std::to_string(seed));
  kv.set("log_every", std::to_string(log_every));
  kv.set("negative_ratio", std::to_string(loss.negative_ratio));
  kv.set("match_threshold", format_double(loss.match_threshold));
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  const auto count = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    DRNET_CHECK(v >= 0, key, " must be non-negative, got ", v);
    return static_cast<std::size_t>(v);
  };
  c.steps = count("steps", c.steps);
  c.batch_size = count("batch_size", c.batch_size);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.warmup_steps = count("warmup_steps", c.warmup_steps);
  c.hflip = kv.get_bool("hflip", c.hflip);
  c.seed = count("seed", c.seed);
  c.log_every = count("log_every", c.log_every);
  c.loss.negative_ratio = static_cast<int>(kv.get_int("negative_ratio", c.loss.negative_ratio));
  c.loss.match_threshold = kv.get_double("match_threshold", c.loss.match_threshold);
  DRNET_CHECK(c.batch_size >= 1, "batch_size must be >= 1");
  DRNET_CHECK(c.base_lr > 0.0, "base_lr must be positive");
  DRNET_CHECK(c.loss.negative_ratio >= 1, "negative_ratio must be >= 1");
  return c;
}

double learning_rate(const TrainConfig& config, std::size_t step) {
  const std::size_t first = config.steps * 6 / 10;
  const std::size_t second = config.steps * 9 / 10;
  double lr = config.base_lr;
  if (step >= second) {
    lr = config.base_lr / 100.0;
  } else if (step >= first) {
    lr = config.base_lr / 10.0;
  }
  if (step < config.warmup_steps) {
    const double f = static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    lr *= 0.1 + 0.9 * f;
  }
  return lr;
}

LossBreakdown train_step(Model& model, Sgd& sgd, std::span<const LabeledImage* const> batch,
                         double lr, const LossOptions& options) {
  DRNET_CHECK(!batch.empty(), "train_step: empty batch");
  std::vector<const Tensor*> images;
  std::vector<std::vector<GroundTruth>> gts;
  for (const LabeledImage* s : batch) {
    images.push_back(&s->image);
    gts.push_back(s->objects);
  }
  const Var input(stack_images(images));
  sgd.zero_grad();
  Tape tape;
  const ForwardResult fwd = forward(tape, model, input);
  LossBreakdown loss = compute_loss(tape, model, fwd, gts, options);
  if (loss.value.requires_grad()) tape.backward(loss.value);
  for (const auto& [name, p] : model.parameters()) {
    if (p.has_grad() && !p.grad().all_finite()) {
      throw Error("non-finite gradient in parameter " + name + " at step " +
                  std::to_string(model.step));
    }
  }
  sgd.step(lr);
  ++model.step;
  return loss;
}

void write_metrics_header(std::ostream& os) { os << "step,L_total,L_loc_ARM,L_loc_ODM,L_conf,lr\n"; }

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.step << ',' << format_double(r.loss.total) << ',' << format_double(r.loss.loc_arm) << ','
     << format_double(r.loss.loc_odm) << ',' << format_double(r.loss.conf) << ','
     << format_double(r.lr) << '\n';
}

void train(Model& model, std::span<const LabeledImage> data, const TrainConfig& config,
           const TrainCallback& on_log) {
  DRNET_CHECK(!data.empty(), "train: empty dataset");
  DRNET_CHECK(config.batch_size >= 1, "train: batch_size must be >= 1");
  std::mt19937_64 rng(config.seed);
  Sgd sgd(model.parameter_vars(), config.momentum, config.weight_decay);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<LabeledImage> flipped;
  std::vector<const LabeledImage*> batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    batch.clear();
    flipped.clear();
    flipped.reserve(config.batch_size);
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const LabeledImage& sample = data[order[cursor++]];
      if (config.hflip && (rng() & 1u)) {
        flipped.push_back(hflip(sample));
        batch.push_back(&flipped.back());
      } else {
        batch.push_back(&sample);
      }
    }
    const double lr = learning_rate(config, step);
    const LossBreakdown loss = train_step(model, sgd, batch, lr, config.loss);
    const bool last = step + 1 == config.steps;
    if (on_log && (last || (config.log_every > 0 && step % config.log_every == 0))) {
      on_log(MetricsRow{step, loss, lr});
    }
  }
}

}  // namespace drnet
