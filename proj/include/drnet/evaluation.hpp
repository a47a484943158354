#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drnet/dataset.hpp"
#include "drnet/postprocess.hpp"

namespace drnet {

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ClassEvaluation {
  int label = 0;
  std::size_t ground_truths = 0;
  std::optional<double> ap;  // empty when the class has no ground truth
  std::vector<PrPoint> curve;
};

/// Per-frame ground truth, indexed by Detection::frame.
using FrameTruth = std::vector<std::vector<GroundTruth>>;

/// All-points interpolated AP of one class. A detection is a true positive
/// when its best-IoU unmatched ground truth (ties to lower index) of the same
/// class and frame overlaps by more than iou_threshold.
ClassEvaluation evaluate_class(std::span<const Detection> detections, const FrameTruth& truth,
                               int label, double iou_threshold = 0.5);

/// Area under the precision envelope of a PR curve given in detection order.
double all_points_ap(std::span<const PrPoint> curve);

/// Arithmetic mean over defined APs; throws when none is defined.
double mean_ap(std::span<const std::optional<double>> aps);

struct Evaluation {
  std::vector<ClassEvaluation> classes;  // labels 1..C
  double map = 0.0;
  std::vector<std::string> warnings;
};

Evaluation evaluate(std::span<const Detection> detections, const FrameTruth& truth, int num_classes,
                    double iou_threshold = 0.5);

void write_pr_csv(std::ostream& os, const ClassEvaluation& c);
void write_pr_svg(std::ostream& os, std::span<const ClassEvaluation> classes);

}  // namespace drnet
