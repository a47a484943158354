#include <doctest.h>

#include <sstream>

#include "drnet/checkpoint.hpp"
#include "drnet/ops.hpp"
#include "../support/oracles.hpp"

using namespace drnet;

TEST_SUITE("tensor") {
  TEST_CASE("shape and indexing") {
    Tensor t({2, 3, 4, 5}, 1.5);
    CHECK(t.numel() == 120);
    CHECK(t.rank() == 4);
    t.at(1, 2, 3, 4) = 7.0;
    CHECK(t[119] == 7.0);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
    CHECK_THROWS_AS(t.item(), Error);
    CHECK(Tensor::scalar(3.0).item() == 3.0);
    CHECK(shape_str({2, 3}) == "[2,3]");
  }

  TEST_CASE("backward requires a scalar loss that depends on parameters") {
    Tape tape;
    const Var p = Var::parameter(Tensor({3}, 1.0));
    const Var y = mul(tape, p, 2.0);
    CHECK_THROWS_AS(tape.backward(y), Error);
    const Var s = sum(tape, y);
    tape.backward(s);
    CHECK(p.grad()[0] == 2.0);
    CHECK(tape.size() == 0);
    Tape other;
    const Var c(Tensor({1}, 2.0));
    CHECK_THROWS_AS(other.backward(c), Error);
  }

  TEST_CASE("inference tape records nothing") {
    Tape tape(false);
    const Var p = Var::parameter(Tensor({4}, 1.0));
    const Var y = sum(tape, relu(tape, p));
    CHECK(tape.size() == 0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.value()[0] == 4.0);
  }

  TEST_CASE("gradients accumulate over shared uses") {
    Tape tape;
    const Var p = Var::parameter(Tensor({2}, std::vector<double>{1.0, -2.0}));
    const Var y = sum(tape, add(tape, mul(tape, p, p), p));
    tape.backward(y);
    CHECK(p.grad()[0] == doctest::Approx(3.0));
    CHECK(p.grad()[1] == doctest::Approx(-3.0));
  }
}

TEST_SUITE("ops") {
  TEST_CASE("conv2d agrees with the loop oracle over random geometries") {
    oracle::Gen g(11);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = g.integer(1, 2), ci = g.integer(1, 3), co = g.integer(1, 4);
      const int k = 2 * g.integer(0, 2) + 1;
      const int stride = g.integer(1, 2), dil = g.integer(1, 2), pad = g.integer(0, 2);
      const std::size_t h = g.integer(k * dil, k * dil + 4), w = g.integer(k * dil, k * dil + 4);
      const Tensor x = g.tensor({n, ci, h, w});
      const Tensor wt = g.tensor({co, ci, std::size_t(k), std::size_t(k)});
      const Tensor b = g.tensor({co});
      const bool use_bias = g.coin();
      Tape tape(false);
      const Var y = conv2d(tape, Var(x), Var(wt), use_bias ? Var(b) : Var(), {stride, pad, dil});
      const Tensor ref = oracle::conv2d(x, wt, use_bias ? &b : nullptr, stride, pad, dil);
      REQUIRE(y.shape() == ref.shape());
      CHECK(max_abs_diff(y.value(), ref) < 1e-10);
    }
  }

  TEST_CASE("conv2d argument errors") {
    Tape tape(false);
    const Var x(Tensor({1, 2, 5, 5}, 1.0));
    CHECK_THROWS_AS(conv2d(tape, x, Var(Tensor({3, 1, 3, 3})), Var(), {}), Error);
    CHECK_THROWS_AS(conv2d(tape, x, Var(Tensor({3, 2, 3, 3})), Var(Tensor({2})), {}), Error);
    CHECK_THROWS_AS(conv2d(tape, x, Var(Tensor({3, 2, 7, 7})), Var(), {}), Error);
    Tensor bad({1, 2, 5, 5}, 1.0);
    bad[3] = std::nan("");
    CHECK_THROWS_AS(conv2d(tape, Var(bad), Var(Tensor({3, 2, 3, 3})), Var(), {}), Error);
  }

  TEST_CASE("softmax rows sum to one and cross entropy matches -log p") {
    oracle::Gen g(3);
    const Tensor logits = g.tensor({5, 4}, 3.0);
    Tape tape(false);
    const Var p = softmax_channel(tape, Var(logits));
    const std::vector<int> cls{0, 1, 2, 3, 1};
    const Var ce = cross_entropy(tape, Var(logits), cls);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += p.value()[r * 4 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(ce.value()[r] == doctest::Approx(-std::log(p.value()[r * 4 + cls[r]])).epsilon(1e-12));
    }
  }

  TEST_CASE("anchor_rows orders rows by cell then anchor") {
    // [1, A*K=2*3, H=1, W=2]
    Tensor x({1, 6, 1, 2});
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t p = 0; p < 2; ++p) x[c * 2 + p] = 100.0 * p + c;
    Tape tape(false);
    const Var r = anchor_rows(tape, Var(x), 2, 3);
    REQUIRE(r.shape() == Shape{1, 4, 3});
    // row (cell 1, anchor 1), k = 2 -> channel 1*3+2 = 5 at cell 1
    CHECK(r.value()[(3) * 3 + 2] == 105.0);
    CHECK(r.value()[(1) * 3 + 0] == 3.0);
  }

  TEST_CASE("concat, slice and gather_rows") {
    Tape tape(false);
    const Var a(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const Var b(Tensor({1, 1, 2}, std::vector<double>{5, 6}));
    const std::vector<Var> parts{a, b};
    const Var c = concat(tape, parts, 1);
    CHECK(c.value() == Tensor({1, 3, 2}, {1, 2, 3, 4, 5, 6}));
    CHECK(slice(tape, c, 1, 1, 3).value() == Tensor({1, 2, 2}, {3, 4, 5, 6}));
    const std::vector<std::size_t> rows{2, 0};
    CHECK(gather_rows(tape, c, rows).value() == Tensor({2, 2}, {5, 6, 1, 2}));
    CHECK_THROWS_AS(slice(tape, c, 1, 2, 4), Error);
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(gather_rows(tape, c, bad), Error);
  }

  TEST_CASE("upsample repeats each cell twice in both directions") {
    Tape tape(false);
    const Var x(Tensor({1, 1, 1, 2}, std::vector<double>{1, 2}));
    CHECK(upsample_nearest2x(tape, x).value() == Tensor({1, 1, 2, 4}, {1, 1, 2, 2, 1, 1, 2, 2}));
  }

  TEST_CASE("smooth L1 branches") {
    Tape tape(false);
    const Var d(Tensor({3}, std::vector<double>{0.5, -2.0, 1.0}));
    const Tensor y = smooth_l1(tape, d).value();
    CHECK(y[0] == 0.125);
    CHECK(y[1] == 1.5);
    CHECK(y[2] == 0.5);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("roundtrip is bit exact") {
    oracle::Gen g(5);
    NamedTensors t{{"a", g.tensor({2, 3})}, {"long.name.weight", g.tensor({1, 2, 3, 4})}, {"s", Tensor({1}, -0.0)}};
    std::stringstream ss;
    write_weights(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "AFW1");
    const NamedTensors back = read_weights(ss);
    REQUIRE(back.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(back[i].first == t[i].first);
      CHECK(back[i].second == t[i].second);
    }
  }

  TEST_CASE("layout is little-endian with u32 counts") {
    std::stringstream ss;
    write_weights(ss, {{"w", Tensor({1}, 1.0)}});
    const std::string b = ss.str();
    // magic, count=1, name_len=1, "w", rank=1, extent u64 = 1, f64 1.0
    REQUIRE(b.size() == 4 + 4 + 4 + 1 + 4 + 8 + 8);
    CHECK(static_cast<unsigned char>(b[4]) == 1);
    CHECK(static_cast<unsigned char>(b[8]) == 1);
    CHECK(b[12] == 'w');
    CHECK(static_cast<unsigned char>(b[17]) == 1);
    CHECK(static_cast<unsigned char>(b[25 + 7]) == 0x3f);
    CHECK(static_cast<unsigned char>(b[25 + 6]) == 0xf0);
  }

  TEST_CASE("corrupt input is rejected") {
    std::stringstream bad_magic("AFW2\0\0\0\0");
    CHECK_THROWS_AS(read_weights(bad_magic), Error);
    std::stringstream ss;
    write_weights(ss, {{"w", Tensor({4}, 1.0)}});
    std::string b = ss.str();
    std::stringstream truncated(b.substr(0, b.size() - 3));
    CHECK_THROWS_AS(read_weights(truncated), Error);
    CHECK_THROWS_AS(load_weights("/nonexistent/file.afw"), Error);
  }
}
