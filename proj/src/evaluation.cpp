#include "drnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "drnet/config.hpp"
#include "drnet/svg.hpp"

namespace drnet {

ClassEvaluation evaluate_class(std::span<const Detection> detections, const FrameTruth& truth,
                               int label, double iou_threshold) {
  ClassEvaluation r;
  r.label = label;
  std::vector<std::vector<bool>> used(truth.size());
  for (std::size_t f = 0; f < truth.size(); ++f) {
    used[f].assign(truth[f].size(), false);
    for (const auto& g : truth[f]) r.ground_truths += g.label == label;
  }
  if (r.ground_truths == 0) return r;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].label == label) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  std::size_t tp = 0, fp = 0;
  for (std::size_t i : order) {
    const Detection& d = detections[i];
    double best = -1.0;
    std::size_t best_g = 0;
    if (d.frame < truth.size()) {
      const auto& gts = truth[d.frame];
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].label != label || used[d.frame][g]) continue;
        const double iou = jaccard(d.box, gts[g].box);
        if (iou > best) {
          best = iou;
          best_g = g;
        }
      }
    }
    if (best > iou_threshold) {
      used[d.frame][best_g] = true;
      ++tp;
    } else {
      ++fp;
    }
    r.curve.push_back(PrPoint{static_cast<double>(tp) / static_cast<double>(r.ground_truths),
                              static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  r.ap = all_points_ap(r.curve);
  return r;
}

double all_points_ap(std::span<const PrPoint> curve) {
  // Envelope: precision at recall r is the max precision at any recall >= r.
  std::vector<double> env(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    env[i] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * env[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

double mean_ap(std::span<const std::optional<double>> aps) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ap : aps) {
    if (!ap) continue;
    total += *ap;
    ++count;
  }
  DRNET_CHECK(count > 0, "mean_ap: no class has ground truth");
  return total / static_cast<double>(count);
}

Evaluation evaluate(std::span<const Detection> detections, const FrameTruth& truth, int num_classes,
                    double iou_threshold) {
  Evaluation e;
  std::vector<std::optional<double>> aps;
  for (int c = 1; c <= num_classes; ++c) {
    e.classes.push_back(evaluate_class(detections, truth, c, iou_threshold));
    aps.push_back(e.classes.back().ap);
    if (!aps.back()) {
      e.warnings.push_back("class " + std::to_string(c) + " has no ground truth; excluded from mAP");
    }
  }
  e.map = mean_ap(aps);
  return e;
}

void write_pr_csv(std::ostream& os, const ClassEvaluation& c) {
  os << "recall,precision\n";
  for (const auto& p : c.curve) os << format_double(p.recall) << ',' << format_double(p.precision) << '\n';
}

void write_pr_svg(std::ostream& os, std::span<const ClassEvaluation> classes) {
  LinePlot plot;
  plot.title = "precision / recall";
  plot.x_label = "recall";
  plot.y_label = "precision";
  plot.x_range = {0.0, 1.0};
  plot.y_range = {0.0, 1.0};
  for (const auto& c : classes) {
    if (!c.ap) continue;
    Series s;
    s.name = "class " + std::to_string(c.label) + " AP " + format_double(std::round(*c.ap * 1000) / 1000);
    for (const auto& p : c.curve) s.points.push_back({p.recall, p.precision});
    plot.series.push_back(std::move(s));
  }
  write_svg(os, plot);
}

}  // namespace drnet
