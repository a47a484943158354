#include "drnet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include <json.hpp>

namespace drnet {

bool canonical_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.anchor != b.anchor) return a.anchor < b.anchor;
  return a.label < b.label;
}

std::vector<Detection> filter_scores(const Tensor& probs, std::span<const Box> boxes,
                                     double threshold, std::size_t frame) {
  DRNET_CHECK(probs.rank() == 2 && probs.extent(0) == boxes.size(), "filter_scores: probabilities ",
              shape_str(probs.shape()), " for ", boxes.size(), " boxes");
  const std::size_t k = probs.extent(1);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t c = 1; c < k; ++c) {
      const double s = probs[i * k + c];
      if (s > threshold) out.push_back(Detection{frame, static_cast<int>(c), s, boxes[i], i});
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold) {
  std::map<int, std::vector<Detection>> by_class;
  for (Detection& d : candidates) by_class[d.label].push_back(std::move(d));
  std::vector<Detection> kept;
  for (auto& [label, dets] : by_class) {
    std::sort(dets.begin(), dets.end(), canonical_before);
    const std::size_t first = kept.size();
    for (const Detection& d : dets) {
      bool suppressed = false;
      for (std::size_t i = first; i < kept.size() && !suppressed; ++i) {
        suppressed = jaccard(kept[i].box, d.box) > iou_threshold;
      }
      if (!suppressed) kept.push_back(d);
    }
  }
  std::sort(kept.begin(), kept.end(), canonical_before);
  return kept;
}

std::vector<Detection> top_k(std::vector<Detection> detections, std::size_t k) {
  DRNET_CHECK(k >= 1, "top_k: k must be >= 1");
  std::sort(detections.begin(), detections.end(), canonical_before);
  if (detections.size() > k) detections.resize(k);
  return detections;
}

Tensor class_probabilities(std::span<const DetectionOutput> outputs, std::size_t n,
                           std::size_t anchors_per_cell) {
  DRNET_CHECK(!outputs.empty(), "class_probabilities: no outputs");
  const std::size_t a = anchors_per_cell;
  const std::size_t k = outputs[0].logits.shape()[1] / a;
  std::size_t total = 0;
  for (const auto& o : outputs) total += o.logits.shape()[2] * o.logits.shape()[3] * a;
  Tensor probs({total, k});
  std::size_t row = 0;
  std::vector<double> logit(k);
  for (const auto& o : outputs) {
    const Tensor& x = o.logits.value();
    DRNET_CHECK(x.extent(1) == a * k && n < x.extent(0), "class_probabilities: logits ",
                shape_str(x.shape()));
    const std::size_t hw = x.extent(2) * x.extent(3);
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t j = 0; j < a; ++j, ++row) {
        for (std::size_t c = 0; c < k; ++c) logit[c] = x[(n * a * k + j * k + c) * hw + p];
        const double mx = *std::max_element(logit.begin(), logit.end());
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logit[c] - mx);
        for (std::size_t c = 0; c < k; ++c) probs[row * k + c] = std::exp(logit[c] - mx) / z;
      }
    }
  }
  return probs;
}

std::vector<Detection> postprocess(std::span<const DetectionOutput> outputs, std::size_t n,
                                   std::size_t anchors_per_cell, const PostprocessConfig& config,
                                   std::size_t frame) {
  const Tensor probs = class_probabilities(outputs, n, anchors_per_cell);
  std::vector<Box> boxes;
  boxes.reserve(probs.extent(0));
  for (const auto& o : outputs) {
    DRNET_CHECK(n < o.boxes.size(), "postprocess: image ", n, " has no decoded boxes");
    boxes.insert(boxes.end(), o.boxes[n].begin(), o.boxes[n].end());
  }
  auto candidates = filter_scores(probs, boxes, config.score_threshold, frame);
  // Decoded boxes can degenerate under extreme offsets; they never leave the pipeline.
  std::erase_if(candidates, [](const Detection& d) { return !d.box.valid(); });
  return top_k(nms(std::move(candidates), config.nms_threshold), config.top_k);
}

void write_detections_jsonl(std::ostream& os, std::span<const Detection> detections) {
  for (const Detection& d : detections) {
    nlohmann::ordered_json j;
    j["frame"] = d.frame;
    j["class"] = d.label;
    j["score"] = d.score;
    j["cx"] = d.box.cx;
    j["cy"] = d.box.cy;
    j["w"] = d.box.w;
    j["h"] = d.box.h;
    os << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(std::istream& is) {
  std::vector<Detection> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Detection d;
      d.frame = j.at("frame").get<std::size_t>();
      d.label = j.at("class").get<int>();
      d.score = j.at("score").get<double>();
      d.box = Box{j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("w").get<double>(),
                  j.at("h").get<double>()};
      d.anchor = out.size();
      out.push_back(d);
    } catch (const nlohmann::json::exception& e) {
      throw Error("detections line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace drnet
