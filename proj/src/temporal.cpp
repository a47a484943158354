#include "drnet/temporal.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "drnet/evaluation.hpp"
#include "drnet/svg.hpp"

namespace drnet {

void KeyFrameSchedule::validate() const {
  DRNET_CHECK(k >= 1, "key frame duration must be >= 1, got ", k);
  DRNET_CHECK(e >= 0.0 && e <= 1.0, "soft coefficient must be in [0,1], got ", e);
}

Tensor soft_refine(const Tensor& ar, double e) {
  DRNET_CHECK(e >= 0.0 && e <= 1.0, "soft coefficient must be in [0,1], got ", e);
  Tensor out = ar;
  for (double& v : out.values()) v *= e;
  return out;
}

StreamResult stream_detect(const Model& model, std::span<const LabeledImage> frames,
                           const StreamOptions& options, std::size_t frame_base) {
  options.schedule.validate();
  DRNET_CHECK(is_temporal(model.config().variant), "stream_detect needs a trnet/tdrnet model, got ",
              to_string(model.config().variant));
  using Clock = std::chrono::steady_clock;
  StreamResult r;
  RefinementState stored;
  const std::size_t a = model.config().anchors_per_cell();
  for (std::size_t m = 0; m < frames.size(); ++m) {
    Tape tape(false);
    const Var image(stack_images({&frames[m].image}));
    const auto start = Clock::now();
    if (options.schedule.is_key(m)) {
      const RefinementState raw = forward_rg(tape, model, image);
      stored = RefinementState{};
      for (const Var& ar : raw.ar) stored.ar.emplace_back(soft_refine(ar.value(), options.schedule.e));
      stored.offsets = options.offsets_from_soft ? refine_offsets(tape, model, stored.ar) : raw.offsets;
      r.key_frames.push_back(m);
      ++r.rg_calls;
    }
    const auto outputs = forward_rd(tape, model, image, stored);
    ++r.rd_calls;
    r.forward_seconds += std::chrono::duration<double>(Clock::now() - start).count();
    r.frames.push_back(postprocess(outputs, 0, a, options.post, frame_base + m));
  }
  return r;
}

std::size_t expected_rg_calls(std::size_t frames, int k) {
  DRNET_CHECK(k >= 1, "key frame duration must be >= 1");
  return (frames + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
}

std::vector<std::vector<GroundTruth>> clip_truth(std::span<const VideoClip> clips) {
  std::vector<std::vector<GroundTruth>> truth;
  for (const auto& clip : clips) {
    for (const auto& f : clip.frames) truth.push_back(f.objects);
  }
  return truth;
}

std::vector<SweepRow> sweep(const Model& model, std::span<const VideoClip> clips,
                            const SweepOptions& options) {
  DRNET_CHECK(!clips.empty(), "sweep: no clips");
  DRNET_CHECK(options.timing_repeats >= 1, "sweep: timing_repeats must be >= 1");
  const auto truth = clip_truth(clips);
  const std::size_t total_frames = truth.size();
  std::vector<SweepRow> rows;
  for (double e : options.es) {
    // Per clip minimum over repeats: a scheduler hiccup spoils one clip's
    // sample instead of a whole pass.
    std::map<int, std::vector<double>> best_seconds;
    std::map<int, SweepRow> by_k;
    for (int rep = 0; rep < options.timing_repeats; ++rep) {
      for (int k : options.ks) {
        StreamOptions so{KeyFrameSchedule{k, e}, options.post, options.offsets_from_soft};
        std::vector<Detection> detections;
        SweepRow row{k, e, 0.0, 0, 0, 0.0};
        std::vector<double>& best = best_seconds[k];
        best.resize(clips.size(), std::numeric_limits<double>::infinity());
        std::size_t base = 0;
        for (std::size_t c = 0; c < clips.size(); ++c) {
          const StreamResult s = stream_detect(model, clips[c].frames, so, base);
          base += clips[c].frames.size();
          row.rg_calls += s.rg_calls;
          row.rd_calls += s.rd_calls;
          best[c] = std::min(best[c], s.forward_seconds);
          if (rep == 0) {
            for (const auto& f : s.frames) detections.insert(detections.end(), f.begin(), f.end());
          }
        }
        if (rep == 0) {
          row.map = evaluate(detections, truth, model.config().num_classes).map;
          by_k[k] = row;
        }
      }
    }
    for (int k : options.ks) {
      SweepRow row = by_k.at(k);
      const auto& best = best_seconds.at(k);
      const double seconds = std::accumulate(best.begin(), best.end(), 0.0);
      row.ms_per_frame = 1000.0 * seconds / static_cast<double>(total_frames);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "k,e,mAP,rg_calls,rd_calls,ms_per_frame\n";
  for (const auto& r : rows) {
    os << r.k << ',' << format_double(r.e) << ',' << format_double(r.map) << ',' << r.rg_calls << ','
       << r.rd_calls << ',' << format_double(std::round(r.ms_per_frame * 1000.0) / 1000.0) << '\n';
  }
}

void write_sweep_svg(std::ostream& os, std::span<const SweepRow> rows, const std::string& title) {
  LinePlot plot;
  plot.title = title;
  plot.x_label = "key frame duration k";
  plot.y_label = "mAP";
  plot.log2_x = true;
  std::vector<double> es;
  for (const auto& r : rows) {
    if (std::find(es.begin(), es.end(), r.e) == es.end()) es.push_back(r.e);
  }
  for (double e : es) {
    Series s;
    s.name = "e = " + format_double(e);
    for (const auto& r : rows) {
      if (r.e == e) s.points.emplace_back(r.k, r.map);
    }
    plot.series.push_back(std::move(s));
  }
  write_svg(os, plot);
}

}  // namespace drnet
