#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "drnet/dataset.hpp"
#include "drnet/model.hpp"

namespace drnet {

struct MatchResult {
  std::vector<int> labels;       // per anchor: 0 background, else class
  std::vector<int> matched_gt;   // per anchor: gt index or -1
  std::size_t positives = 0;
};

/// Two-phase matching. First every gt claims an anchor: the globally best
/// (gt, anchor) overlap pair is fixed, both leave the pool, repeat (ties go to
/// the lower anchor, then lower gt index). Then every unclaimed anchor whose
/// best overlap exceeds the threshold is matched to that gt.
MatchResult match(std::span<const Box> anchors, std::span<const GroundTruth> gts,
                  double threshold = 0.5);

/// The ratio*N background anchors with highest confidence loss, ties by lower
/// index, returned in ascending index order.
std::vector<std::size_t> hard_negative_mine(std::span<const double> conf_loss,
                                            const MatchResult& match, int ratio = 3);

struct LossOptions {
  int negative_ratio = 3;
  double match_threshold = 0.5;
};

struct LossBreakdown {
  double total = 0.0;
  double loc_arm = 0.0;
  double loc_odm = 0.0;
  double conf = 0.0;
  std::size_t n_arm = 0;
  std::size_t n_odm = 0;
  std::size_t negatives = 0;
  Var value;  // differentiable total
};

/// Per-anchor rows of a forward pass, anchors in generation order.
struct AnchorRows {
  Var ar;      // [N,T,4] or undefined
  Var local;   // [N,T,4]
  Var logits;  // [N,T,C+1]
};

AnchorRows flatten_outputs(Tape& tape, const Model& model, const ForwardResult& fwd);

/// ODM reference anchors of image n: ar (+) ao, optionally clipped.
std::vector<Box> reference_anchors(const Model& model, const ForwardResult& fwd, std::size_t n);

/// Offset targets encode(gt, decode(ar, ao)) as a function of ar rows [M,4].
Var refined_targets(Tape& tape, const Var& ar, std::span<const Box> anchors,
                    std::span<const Box> gts, const OffsetCoding& coding);

LossBreakdown compute_loss(Tape& tape, const Model& model, const ForwardResult& fwd,
                           std::span<const std::vector<GroundTruth>> gts,
                           const LossOptions& options = {});

/// Classic momentum SGD with L2 weight decay:
///   v <- momentum*v + g + weight_decay*w,  w <- w - lr*v
class Sgd {
 public:
  Sgd(std::vector<Var> params, double momentum = 0.9, double weight_decay = 5e-4);
  void step(double lr);
  void zero_grad();
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double base_lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Steps of linear warm-up from base_lr/10 at the start of the run.
  std::size_t warmup_steps = 0;
  bool hflip = true;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  LossOptions loss;

  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv);
  static std::vector<std::string> keys();
};

/// Three phases: base for 60% of steps, base/10 for the next 30%, base/100
/// for the rest.
double learning_rate(const TrainConfig& config, std::size_t step);

/// One optimizer step on a batch; throws (naming the parameter) when a
/// gradient is not finite, leaving the weights untouched.
LossBreakdown train_step(Model& model, Sgd& sgd, std::span<const LabeledImage* const> batch,
                         double lr, const LossOptions& options = {});

struct MetricsRow {
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

using TrainCallback = std::function<void(const MetricsRow&)>;

/// Runs config.steps steps over shuffled epochs of data. Rows are emitted
/// every log_every steps and at the last step.
void train(Model& model, std::span<const LabeledImage> data, const TrainConfig& config,
           const TrainCallback& on_log = {});

}  // namespace drnet
