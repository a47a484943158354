#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drnet/deform.hpp"
#include "drnet/heads.hpp"
#include "../support/oracles.hpp"

using namespace drnet;

namespace {

Tensor random_offsets(oracle::Gen& g, Shape s, double range) {
  Tensor t(std::move(s));
  for (double& v : t.values()) v = g.uniform(-range, range);
  return t;
}

}  // namespace

TEST_SUITE("deform") {
  TEST_CASE("bilinear sampling agrees with the triangle-kernel oracle") {
    oracle::Gen g(21);
    const Tensor x = g.tensor({1, 1, 5, 6});
    for (int i = 0; i < 500; ++i) {
      const double y = g.uniform(-2, 7), xx = g.uniform(-2, 8);
      CHECK(std::abs(bilinear_sample(x.data(), 5, 6, y, xx) - oracle::bilinear(x, 0, 0, y, xx)) < 1e-12);
    }
    CHECK(bilinear_sample(x.data(), 5, 6, 2, 3) == x.at(0, 0, 2, 3));
    CHECK(bilinear_sample(x.data(), 5, 6, -1, 0) == 0.0);
    CHECK(bilinear_sample(x.data(), 5, 6, 0, 6) == 0.0);
  }

  TEST_CASE("deform_conv2d agrees with the sampling oracle") {
    oracle::Gen g(22);
    for (int trial = 0; trial < 40; ++trial) {
      const int k = g.coin() ? 3 : 5, dil = g.integer(1, 2);
      const int pad = dil * (k - 1) / 2;
      const std::size_t n = g.integer(1, 2), ci = g.integer(1, 3), co = g.integer(1, 3);
      const std::size_t h = g.integer(3, 7), w = g.integer(3, 7);
      const Tensor x = g.tensor({n, ci, h, w});
      const Tensor wt = g.tensor({co, ci, std::size_t(k), std::size_t(k)});
      const Tensor b = g.tensor({co});
      const Tensor off = random_offsets(g, {n, std::size_t(2 * k * k), h, w}, 3.0);
      Tape tape(false);
      const Var y = deform_conv2d(tape, Var(x), Var(wt), Var(b), Var(off), {1, pad, dil});
      const Tensor ref = oracle::deform_conv2d(x, wt, &b, off, 1, pad, dil);
      REQUIRE(y.shape() == ref.shape());
      CHECK(max_abs_diff(y.value(), ref) < 1e-10);
    }
  }

  TEST_CASE("zero offsets reduce to conv2d and integer offsets shift taps") {
    oracle::Gen g(23);
    const Tensor x = g.tensor({1, 2, 6, 6});
    const Tensor wt = g.tensor({3, 2, 3, 3});
    const Tensor b = g.tensor({3});
    Tape tape(false);
    const Var plain = conv2d(tape, Var(x), Var(wt), Var(b), {1, 1, 1});
    const Var zero = deform_conv2d(tape, Var(x), Var(wt), Var(b), Var(Tensor({1, 18, 6, 6})), {1, 1, 1});
    CHECK(max_abs_diff(plain.value(), zero.value()) == 0.0);
    // Every tap moved down one row equals a conv over the input shifted up,
    // away from the top border where padding differs.
    Tensor off({1, 18, 6, 6});
    for (std::size_t t = 0; t < 9; ++t)
      for (std::size_t i = 0; i < 36; ++i) off[(2 * t) * 36 + i] = 1.0;
    Tensor shifted({1, 2, 6, 6});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y + 1 < 6; ++y)
        for (std::size_t xx = 0; xx < 6; ++xx) shifted.at(0, c, y, xx) = x.at(0, c, y + 1, xx);
    const Var moved = deform_conv2d(tape, Var(x), Var(wt), Var(b), Var(off), {1, 1, 1});
    const Var ref = conv2d(tape, Var(shifted), Var(wt), Var(b), {1, 1, 1});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 1; y < 6; ++y)
        for (std::size_t xx = 0; xx < 6; ++xx)
          CHECK(std::abs(moved.value().at(0, c, y, xx) - ref.value().at(0, c, y, xx)) < 1e-12);
  }

  TEST_CASE("deform_conv2d rejects mismatched offsets") {
    Tape tape(false);
    const Var x(Tensor({1, 1, 4, 4}));
    const Var w(Tensor({1, 1, 3, 3}));
    CHECK_THROWS_AS(deform_conv2d(tape, x, w, Var(), Var(Tensor({1, 9, 4, 4})), {1, 1, 1}), Error);
    CHECK_THROWS_AS(deform_conv2d(tape, x, w, Var(), Var(Tensor({1, 18, 3, 4})), {1, 1, 1}), Error);
  }

  TEST_CASE("sampling centers read the center tap") {
    Tensor off({1, 18, 2, 2});
    off.at(0, 8, 1, 0) = 0.5;   // dy of tap 4
    off.at(0, 9, 1, 0) = -1.0;  // dx of tap 4
    const auto centers = sampling_centers(off, 0, 3, 8, 2, 1);
    REQUIRE(centers.size() == 4);
    const auto& c = centers[2];
    CHECK(c.row == 1);
    CHECK(c.col == 0);
    CHECK(c.base_x == 4.0);
    CHECK(c.base_y == 12.0);
    CHECK(c.refined_x == -4.0);
    CHECK(c.refined_y == 16.0);
    std::ostringstream os;
    write_sampling_centers_csv(os, centers);
    CHECK(os.str().rfind("level,path,row,col,base_x,base_y,refined_x,refined_y\n2,1,0,0,", 0) == 0);
  }
}

TEST_SUITE("heads") {
  TEST_CASE("feature location refine is a 1x1 convolution over anchor offsets") {
    oracle::Gen g(31);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t a = g.integer(1, 3), taps = g.coin() ? 9 : 25;
      const Tensor ar = g.tensor({2, 4 * a, 3, 4});
      const Tensor w = g.tensor({2 * taps, 4 * a, 1, 1}), b = g.tensor({2 * taps});
      Tape tape(false);
      const Var y = feature_location_refine(tape, Var(ar), {Var(w), Var(b)});
      CHECK(max_abs_diff(y.value(), oracle::conv2d(ar, w, &b, 1, 0, 1)) < 1e-10);
    }
    Tape tape(false);
    CHECK_THROWS_AS(feature_location_refine(tape, Var(Tensor({1, 4, 2, 2})),
                                            {Var(Tensor({18, 4, 3, 3})), Var(Tensor({18}))}),
                    Error);
  }

  TEST_CASE("refined anchors decode ar against the original anchors") {
    const std::vector<Box> anchors{{8, 8, 16, 16}, {8, 8, 22, 11}};
    Tensor ar({1, 8, 1, 1});
    ar[0] = 1.0;  // anchor 0, t_x
    ar[7] = std::log(2.0) / 0.2;  // anchor 1, t_h
    const auto boxes = refined_anchors(ar, 0, anchors, 2, {});
    CHECK(boxes[0].cx == doctest::Approx(8 + 0.1 * 16));
    CHECK(boxes[1].h == doctest::Approx(22.0));
    const auto same = refined_anchors(Tensor(), 0, anchors, 2, {});
    CHECK(same[0] == anchors[0]);
    CHECK(same[1] == anchors[1]);
  }

  TEST_CASE("multi-path outputs are the sum of single paths") {
    oracle::Gen g(32);
    const std::size_t a = 2, d = 3, h = 4, w = 4, cls = 3;
    MultiHeadConfig cfg;
    const Var f(g.tensor({1, d, h, w}));
    const Var ar(g.tensor({1, 4 * a, h, w}, 0.2));
    std::vector<Var> offsets;
    std::vector<PathWeights> pw;
    for (const auto& p : cfg.paths) {
      const auto k = static_cast<std::size_t>(p.kernel);
      offsets.emplace_back(random_offsets(g, {1, 2 * k * k, h, w}, 1.5));
      pw.push_back({{Var(g.tensor({4 * a, d, k, k})), Var(g.tensor({4 * a}))},
                    {Var(g.tensor({cls * a, d, k, k})), Var(g.tensor({cls * a}))}});
    }
    std::vector<Box> anchors(h * w * a, Box{8, 8, 8, 8});
    Tape tape(false);
    const auto both = multi_head_detect(tape, f, ar, offsets, cfg, pw, anchors, a, {});
    Tensor local({1, 4 * a, h, w}), logits({1, cls * a, h, w});
    for (std::size_t p = 0; p < 2; ++p) {
      const auto one = anchor_offset_detect(tape, f, ar, offsets[p], pw[p], cfg.paths[p], anchors, a, {});
      for (std::size_t i = 0; i < local.numel(); ++i) local[i] += one.local.value()[i];
      for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] += one.logits.value()[i];
    }
    CHECK(max_abs_diff(both.local.value(), local) < 1e-12);
    CHECK(max_abs_diff(both.logits.value(), logits) < 1e-12);
    // Boxes are the fused local offsets decoded against the refined anchors.
    const auto refined = refined_anchors(ar.value(), 0, anchors, a, {});
    const auto decoded = decode_level(local, ar.value(), anchors, a, {});
    REQUIRE(both.boxes.size() == 1);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      CHECK(both.boxes[0][i].cx == doctest::Approx(decoded[0][i].cx));
      CHECK(both.boxes[0][i].w == doctest::Approx(decoded[0][i].w));
    }
    const std::size_t cell = 5, anchor = 1, t = cell * a + anchor;
    const BoxOffsets lo{local.at(0, 4 * anchor, cell / w, cell % w), local.at(0, 4 * anchor + 1, cell / w, cell % w),
                        local.at(0, 4 * anchor + 2, cell / w, cell % w),
                        local.at(0, 4 * anchor + 3, cell / w, cell % w)};
    const Box expect = decode(lo, refined[t], {});
    CHECK(both.boxes[0][t].cx == doctest::Approx(expect.cx));
    CHECK(both.boxes[0][t].h == doctest::Approx(expect.h));
  }

  TEST_CASE("non-deformable head ignores offsets") {
    oracle::Gen g(33);
    const Var f(g.tensor({1, 2, 3, 3}));
    const PathWeights pw{{Var(g.tensor({4, 2, 3, 3})), Var(g.tensor({4}))},
                         {Var(g.tensor({3, 2, 3, 3})), Var(g.tensor({3}))}};
    const Var off(random_offsets(g, {1, 18, 3, 3}, 1.0));
    std::vector<Box> anchors(9, Box{4, 4, 4, 4});
    Tape tape(false);
    const auto plain = anchor_offset_detect(tape, f, Var(), off, pw, {3, 1}, anchors, 1, {}, false);
    const Var ref = conv2d(tape, f, pw.conf.weight, pw.conf.bias, {1, 1, 1});
    CHECK(max_abs_diff(plain.logits.value(), ref.value()) == 0.0);
  }

  TEST_CASE("head path geometry") {
    CHECK(HeadPath{5, 2}.padding() == 4);
    CHECK(HeadPath{3, 1}.taps() == 9);
    MultiHeadConfig bad;
    bad.paths = {{4, 1}};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.paths = {};
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}
