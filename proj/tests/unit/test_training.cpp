#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drnet/synthetic.hpp"
#include "drnet/training.hpp"
#include "../support/oracles.hpp"
#include "../support/reductions.hpp"

using namespace drnet;

namespace {

std::vector<GroundTruth> random_truth(oracle::Gen& g, int count, int classes = 3) {
  std::vector<GroundTruth> out;
  for (int i = 0; i < count; ++i) out.push_back({g.box(32, 3, 20), g.integer(1, classes)});
  return out;
}

std::array<double, 4> enc(const Box& gt, const Box& a) {
  return {(gt.cx - a.cx) / a.w / 0.1, (gt.cy - a.cy) / a.h / 0.1, std::log(gt.w / a.w) / 0.2,
          std::log(gt.h / a.h) / 0.2};
}

double huber(double d) { return std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5; }

// The loss recomputed from raw head tensors with the oracle matcher and miner.
double loss_oracle(const Model& m, const ForwardResult& fwd, const std::vector<std::vector<GroundTruth>>& gts) {
  const auto& c = m.config();
  const std::size_t a = c.anchors_per_cell(), k = c.num_classes + 1;
  const auto& anchors = m.anchors().boxes;
  const bool has_ar = !fwd.state.ar.empty() && fwd.state.ar[0].defined();
  double arm = 0, odm = 0, conf = 0;
  std::size_t n_arm = 0, n_odm = 0;
  for (std::size_t n = 0; n < gts.size(); ++n) {
    std::vector<std::array<double, 4>> ar, loc;
    std::vector<std::vector<double>> logits;
    for (std::size_t l = 0; l < fwd.outputs.size(); ++l) {
      const Tensor& lo = fwd.outputs[l].local.value();
      const Tensor& lg = fwd.outputs[l].logits.value();
      for (std::size_t y = 0; y < lo.extent(2); ++y)
        for (std::size_t x = 0; x < lo.extent(3); ++x)
          for (std::size_t j = 0; j < a; ++j) {
            std::array<double, 4> r{}, o{};
            for (std::size_t q = 0; q < 4; ++q) {
              o[q] = lo.at(n, j * 4 + q, y, x);
              if (has_ar) r[q] = fwd.state.ar[l].value().at(n, j * 4 + q, y, x);
            }
            std::vector<double> row;
            for (std::size_t q = 0; q < k; ++q) row.push_back(lg.at(n, j * k + q, y, x));
            ar.push_back(r);
            loc.push_back(o);
            logits.push_back(row);
          }
    }
    std::vector<Box> ref;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const Box& b = anchors[i];
      ref.push_back(Box{b.cx + ar[i][0] * 0.1 * b.w, b.cy + ar[i][1] * 0.1 * b.h, b.w * std::exp(ar[i][2] * 0.2),
                        b.h * std::exp(ar[i][3] * 0.2)});
    }
    if (has_ar) {
      const auto mt = oracle::match(anchors, gts[n]);
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (mt.gt[i] < 0) continue;
        ++n_arm;
        const auto t = enc(gts[n][mt.gt[i]].box, anchors[i]);
        for (int q = 0; q < 4; ++q) arm += huber(ar[i][q] - t[q]);
      }
    }
    const auto mt = oracle::match(ref, gts[n]);
    std::vector<int> labels(anchors.size(), 0);
    std::vector<double> bg(anchors.size());
    const auto ce = [&](std::size_t i, int cls) {
      double mx = -INFINITY, z = 0;
      for (double v : logits[i]) mx = std::max(mx, v);
      for (double v : logits[i]) z += std::exp(v - mx);
      return mx + std::log(z) - logits[i][cls];
    };
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      bg[i] = ce(i, 0);
      if (mt.gt[i] < 0) continue;
      ++n_odm;
      labels[i] = gts[n][mt.gt[i]].label;
      const auto t = enc(gts[n][mt.gt[i]].box, ref[i]);
      for (int q = 0; q < 4; ++q) odm += huber(loc[i][q] - t[q]);
      conf += ce(i, labels[i]);
    }
    for (std::size_t i : oracle::mine(bg, labels, 3)) conf += bg[i];
  }
  double total = 0;
  if (n_arm > 0) total += arm / n_arm;
  if (n_odm > 0) total += (odm + conf) / n_odm;
  return total;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("matching agrees with the pair-walk oracle") {
    oracle::Gen g(41);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Box> anchors;
      const int na = g.integer(1, 40);
      for (int i = 0; i < na; ++i) anchors.push_back(g.box(32, 3, 20));
      if (g.coin() && na > 1) anchors[na - 1] = anchors[0];  // exact tie
      const auto gts = random_truth(g, g.integer(0, 5));
      const MatchResult r = match(anchors, gts);
      const auto ref = oracle::match(anchors, gts);
      CHECK(r.matched_gt == ref.gt);
      std::size_t pos = 0;
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        pos += ref.gt[i] >= 0;
        CHECK(r.labels[i] == (ref.gt[i] >= 0 ? gts[ref.gt[i]].label : 0));
      }
      CHECK(r.positives == pos);
    }
  }

  TEST_CASE("every ground truth claims an anchor even without overlap") {
    const std::vector<Box> anchors{{4, 4, 4, 4}, {20, 20, 4, 4}};
    const std::vector<GroundTruth> gts{{Box{50, 50, 2, 2}, 2}, {Box{20, 20, 4, 4}, 1}};
    const MatchResult r = match(anchors, gts);
    CHECK(r.matched_gt == std::vector<int>{0, 1});
    CHECK(r.labels == std::vector<int>{2, 1});
    // Equal overlaps go to the lower anchor; the second anchor clears 0.5.
    const std::vector<Box> twins{{8, 8, 8, 8}, {8, 8, 8, 8}};
    const MatchResult t = match(twins, std::vector<GroundTruth>{{Box{8, 8, 8, 8}, 3}});
    CHECK(t.matched_gt == std::vector<int>{0, 0});
    const MatchResult low = match(twins, std::vector<GroundTruth>{{Box{8, 8, 8, 4}, 3}});
    CHECK(low.matched_gt == std::vector<int>{0, -1});  // IoU exactly 0.5 is not enough
    CHECK(match(twins, std::vector<GroundTruth>{}).positives == 0);
  }

  TEST_CASE("hard negative mining agrees with the sorting oracle") {
    oracle::Gen g(42);
    for (int trial = 0; trial < 200; ++trial) {
      const int t = g.integer(1, 60);
      MatchResult m;
      std::vector<double> loss;
      for (int i = 0; i < t; ++i) {
        const bool pos = g.integer(0, 9) == 0;
        m.labels.push_back(pos ? g.integer(1, 3) : 0);
        m.matched_gt.push_back(pos ? 0 : -1);
        m.positives += pos;
        loss.push_back(static_cast<double>(g.integer(0, 6)));  // many ties
      }
      const int ratio = g.integer(1, 4);
      CHECK(hard_negative_mine(loss, m, ratio) == oracle::mine(loss, m.labels, ratio));
    }
    MatchResult m;
    m.labels = {0, 1};
    CHECK_THROWS_AS(hard_negative_mine(std::vector<double>{1.0}, m, 3), Error);
  }

  TEST_CASE("loss agrees with an independent recomputation") {
    oracle::Gen g(43);
    for (Variant v : {Variant::DRNet, Variant::SSD4s, Variant::TDRNet}) {
      for (int trial = 0; trial < 4; ++trial) {
        const Model m = Model::build(oracle::reduction_config(v), trial);
        oracle::randomize(m, g, 0.15);
        const Var images = oracle::random_images(g, 2, 32);
        std::vector<std::vector<GroundTruth>> gts{random_truth(g, g.integer(1, 3)), random_truth(g, g.integer(0, 2))};
        Tape tape(false);
        const ForwardResult fwd = forward(tape, m, images);
        const LossBreakdown loss = compute_loss(tape, m, fwd, gts);
        const double ref = loss_oracle(m, fwd, gts);
        INFO(to_string(v), " trial ", trial);
        CHECK(std::abs(loss.total - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
      }
    }
  }

  TEST_CASE("empty ground truth gives zero loss") {
    const Model m = Model::build(oracle::reduction_config(Variant::DRNet), 1);
    Tape tape;
    const ForwardResult fwd = forward(tape, m, Var(Tensor({1, 1, 32, 32}, 0.3)));
    const std::vector<std::vector<GroundTruth>> none(1);
    const LossBreakdown loss = compute_loss(tape, m, fwd, none);
    CHECK(loss.total == 0.0);
    CHECK(loss.n_arm == 0);
    CHECK(loss.n_odm == 0);
    const std::vector<std::vector<GroundTruth>> two(2);
    CHECK_THROWS_AS(compute_loss(tape, m, fwd, two), Error);
  }

  TEST_CASE("refined anchor gradients cannot be combined with clipping") {
    ModelConfig c = oracle::reduction_config(Variant::DRNet);
    c.refined_anchor_grad = true;
    c.clip_refined_anchors = true;
    const Model m = Model::build(c, 1);
    Tape tape;
    const ForwardResult fwd = forward(tape, m, Var(Tensor({1, 1, 32, 32}, 0.3)));
    const std::vector<std::vector<GroundTruth>> gts{{{Box{10, 10, 8, 8}, 1}}};
    CHECK_THROWS_AS(compute_loss(tape, m, fwd, gts), Error);
  }

  TEST_CASE("refined targets encode against the decoded refined anchor") {
    oracle::Gen g(44);
    const Var ar(g.tensor({3, 4}, 0.5));
    const std::vector<Box> anchors{g.box(), g.box(), g.box()}, gts{g.box(), g.box(), g.box()};
    Tape tape(false);
    const Var t = refined_targets(tape, ar, anchors, gts, {});
    for (std::size_t i = 0; i < 3; ++i) {
      const Box ref = decode({ar.value()[4 * i], ar.value()[4 * i + 1], ar.value()[4 * i + 2], ar.value()[4 * i + 3]},
                             anchors[i], {});
      const auto e = enc(gts[i], ref);
      for (std::size_t q = 0; q < 4; ++q) CHECK(t.value()[4 * i + q] == doctest::Approx(e[q]).epsilon(1e-12));
    }
  }

  TEST_CASE("sgd applies momentum and weight decay") {
    const Var w = Var::parameter(Tensor({2}, std::vector<double>{1.0, -2.0}));
    Sgd sgd({w}, 0.9, 0.1);
    w.grad_buffer() = Tensor({2}, std::vector<double>{0.5, 0.0});
    sgd.step(0.1);
    // v = 0.5 + 0.1 = 0.6, w = 1 - 0.06; v2 = 0 - 0.2, w2 = -2 + 0.02
    CHECK(w.value()[0] == doctest::Approx(0.94));
    CHECK(w.value()[1] == doctest::Approx(-1.98));
    sgd.zero_grad();
    sgd.step(0.1);
    // v = 0.9*0.6 + 0.094 = 0.634
    CHECK(sgd.velocity()[0][0] == doctest::Approx(0.634));
    CHECK(w.value()[0] == doctest::Approx(0.94 - 0.0634));
  }

  TEST_CASE("learning rate steps down at 60% and 90%") {
    TrainConfig c;
    c.steps = 100;
    c.base_lr = 1.0;
    CHECK(learning_rate(c, 0) == 1.0);
    CHECK(learning_rate(c, 59) == 1.0);
    CHECK(learning_rate(c, 60) == doctest::Approx(0.1));
    CHECK(learning_rate(c, 89) == doctest::Approx(0.1));
    CHECK(learning_rate(c, 90) == doctest::Approx(0.01));
    c.warmup_steps = 10;
    CHECK(learning_rate(c, 0) == doctest::Approx(0.1));
    CHECK(learning_rate(c, 5) == doctest::Approx(0.55));
    CHECK(learning_rate(c, 10) == 1.0);
  }

  TEST_CASE("train config key values round trip") {
    TrainConfig c;
    c.steps = 77;
    c.base_lr = 0.0125;
    c.hflip = false;
    c.loss.negative_ratio = 2;
    const TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
    CHECK(back.to_key_values().entries() == c.to_key_values().entries());
    KeyValues kv;
    kv.set("batch_size", "0");
    CHECK_THROWS_AS(TrainConfig::from_key_values(kv), Error);
    kv = {};
    kv.set("steps", "-3");
    CHECK_THROWS_AS(TrainConfig::from_key_values(kv), Error);
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    SceneSpec spec;
    spec.canvas = 32;
    spec.min_size = 8;
    spec.max_size = 16;
    spec.seed = 3;
    const auto data = generate_images(spec, 8);
    std::size_t dropped = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      TrainConfig tc;
      tc.steps = 200;
      tc.batch_size = 4;
      tc.base_lr = 0.01;
      tc.seed = seed;
      tc.log_every = 1;
      std::vector<double> losses;
      Model m = Model::build(oracle::reduction_config(Variant::DRNet), seed);
      train(m, data, tc, [&](const MetricsRow& r) { losses.push_back(r.loss.total); });
      REQUIRE(losses.size() == 200);
      CHECK(m.step == 200);
      double first = 0, last = 0;
      for (int i = 0; i < 20; ++i) {
        first += losses[i];
        last += losses[losses.size() - 1 - i];
      }
      INFO("seed ", seed, " first ", first / 20, " last ", last / 20);
      CHECK(last <= 0.5 * first);
      dropped += last <= 0.5 * first;
      if (seed == 0) {
        Model again = Model::build(oracle::reduction_config(Variant::DRNet), seed);
        train(again, data, tc);
        CHECK(again.state() == m.state());
      }
    }
    CHECK(dropped == 3);
  }

  TEST_CASE("metrics rows") {
    std::ostringstream os;
    write_metrics_header(os);
    MetricsRow r;
    r.step = 5;
    r.loss.total = 1.5;
    r.loss.loc_arm = 0.25;
    r.lr = 0.001;
    write_metrics_row(os, r);
    CHECK(os.str() == "step,L_total,L_loc_ARM,L_loc_ODM,L_conf,lr\n5,1.5,0.25,0,0,0.001\n");
  }
}
