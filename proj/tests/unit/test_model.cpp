#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "drnet/model.hpp"
#include "../support/reductions.hpp"

using namespace drnet;

TEST_SUITE("model") {
  TEST_CASE("level extents halve with rounding up") {
    ModelConfig c;
    auto shapes = c.level_shapes();
    CHECK(shapes[0].height == 16);
    CHECK(shapes[3].width == 2);
    c.input_size = 16;
    shapes = c.level_shapes();
    CHECK(shapes[0].height == 4);
    CHECK(shapes[2].height == 1);
    CHECK(shapes[3].height == 1);
    c.input_size = 40;
    CHECK(c.level_shapes()[1].height == 5);
  }

  TEST_CASE("parameter counts match the closed form for every variant") {
    for (Variant v : {Variant::DRNet, Variant::SSD4s, Variant::TRNet, Variant::TDRNet}) {
      for (bool tie : {false, true}) {
        ModelConfig c;
        c.variant = v;
        c.tie_rg_rd = tie;
        const Model m = Model::build(c, 1);
        CHECK(m.parameter_count() == expected_parameter_count(c));
      }
    }
    ModelConfig c;
    c.offset_source = OffsetSource::Feature;
    CHECK(Model::build(c, 1).parameter_count() == expected_parameter_count(c));
    c.offset_source = OffsetSource::None;
    CHECK(Model::build(c, 1).parameter_count() == expected_parameter_count(c));
    CHECK(Model::build(ModelConfig{}, 1).parameter_count() == 317952);
  }

  TEST_CASE("initialization is a function of seed and parameter name") {
    const Model a = Model::build(ModelConfig{}, 3), b = Model::build(ModelConfig{}, 3);
    const Model c = Model::build(ModelConfig{}, 4);
    CHECK(a.state() == b.state());
    CHECK(a.param("backbone.stem.weight").value() != c.param("backbone.stem.weight").value());
    CHECK(a.param("fr.level0.path0.weight").value() == Tensor(a.param("fr.level0.path0.weight").shape()));
    CHECK(a.param("odm.level1.path1.conf.bias").value() ==
          Tensor(a.param("odm.level1.path1.conf.bias").shape()));
    ModelConfig z;
    z.zero_init_refinement = true;
    const Model zm = Model::build(z, 3);
    CHECK(zm.param("arm.level2.weight").value() == Tensor(zm.param("arm.level2.weight").shape()));
    CHECK_THROWS_AS(a.param("nope"), Error);
  }

  TEST_CASE("forward shapes") {
    ModelConfig c;
    const Model m = Model::build(c, 1);
    Tape tape(false);
    const auto fwd = forward(tape, m, Var(Tensor({2, 1, 64, 64}, 0.5)));
    REQUIRE(fwd.outputs.size() == 4);
    CHECK(fwd.outputs[0].logits.shape() == Shape{2, 12, 16, 16});
    CHECK(fwd.outputs[3].local.shape() == Shape{2, 12, 2, 2});
    CHECK(fwd.state.ar[1].shape() == Shape{2, 12, 8, 8});
    CHECK(fwd.state.offsets[0][1].shape() == Shape{2, 50, 16, 16});
    CHECK(fwd.outputs[0].boxes[1].size() == 16 * 16 * 3);
    CHECK_THROWS_AS(forward(tape, m, Var(Tensor({1, 1, 32, 32}))), Error);
  }

  TEST_CASE("reduction chain holds exactly") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto r = oracle::reduction_gaps(seed);
      CHECK(r.drnet_zero_init_vs_ssd4s <= 1e-12);
      CHECK(r.drnet_zero_refine_vs_ssd4s <= 1e-12);
      CHECK(r.drnet_zero_offsets_vs_refinedet <= 1e-12);
      CHECK(r.trnet_rd_zero_state_vs_ssd4s <= 1e-12);
      CHECK(r.tdrnet_rd_zero_state_vs_ssd4s <= 1e-12);
    }
  }

  TEST_CASE("nonzero refinement changes the output") {
    oracle::Gen g(9);
    const Model ssd = Model::build(oracle::reduction_config(Variant::SSD4s), 2);
    const Model dr = Model::build(oracle::reduction_config(Variant::DRNet), 2);
    oracle::randomize(dr, g, 0.3);
    oracle::copy_into(ssd, dr);
    const Var images = oracle::random_images(g, 1, 32);
    Tape tape(false);
    CHECK(oracle::output_gap(forward(tape, dr, images).outputs, forward(tape, ssd, images).outputs) > 1e-6);
  }

  TEST_CASE("temporal forward runs RD on RG's state of the same frame") {
    oracle::Gen g(10);
    const Model m = Model::build(oracle::reduction_config(Variant::TDRNet), 5);
    oracle::randomize(m, g, 0.3);
    const Var images = oracle::random_images(g, 1, 32);
    Tape tape(false);
    const auto joint = forward(tape, m, images);
    const auto split = forward_rd(tape, m, images, forward_rg(tape, m, images));
    CHECK(oracle::output_gap(joint.outputs, split) == 0.0);
    RefinementState wrong = forward_rg(tape, m, images);
    wrong.offsets.clear();
    CHECK_THROWS_AS(forward_rd(tape, m, images, wrong), Error);
  }

  TEST_CASE("tied RG/RD shares the backbone") {
    ModelConfig c = oracle::reduction_config(Variant::TRNet);
    c.tie_rg_rd = true;
    const Model m = Model::build(c, 1);
    CHECK(m.has_param("rg.backbone.stem.weight"));
    CHECK_FALSE(m.has_param("rd.backbone.stem.weight"));
    CHECK(m.has_param("rd.fpn.lateral.level0.weight"));
  }

  TEST_CASE("config validation") {
    ModelConfig c;
    c.input_size = 8;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.strides = {8, 16, 32, 64};
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.variant = Variant::TRNet;
    c.offset_source = OffsetSource::Feature;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.ratios.clear();
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_THROWS_AS(parse_variant("yolo"), Error);
    CHECK(parse_variant(to_string(Variant::TDRNet)) == Variant::TDRNet);
    CHECK(parse_offset_source("feature") == OffsetSource::Feature);
  }

  TEST_CASE("config key values round trip") {
    ModelConfig c;
    c.variant = Variant::TDRNet;
    c.head.paths = {{3, 2}, {5, 1}, {7, 1}};
    c.ratios = {1.0, 3.0};
    c.tie_rg_rd = true;
    c.coding.size_variance = 0.25;
    const ModelConfig back = ModelConfig::from_key_values(c.to_key_values());
    CHECK(back.to_key_values().entries() == c.to_key_values().entries());
    CHECK(back.head.paths == c.head.paths);
    KeyValues kv = c.to_key_values();
    kv.set("head_dilations", "1");
    CHECK_THROWS_AS(ModelConfig::from_key_values(kv), Error);
  }

  TEST_CASE("checkpoints round trip and reject mismatched state") {
    const auto dir = std::filesystem::temp_directory_path() / "drnet_model_test";
    std::filesystem::create_directories(dir);
    ModelConfig c = oracle::reduction_config(Variant::DRNet);
    Model m = Model::build(c, 7);
    m.step = 123;
    save_checkpoint(m, dir / "ckpt");
    const Model back = load_checkpoint(dir / "ckpt");
    CHECK(back.step == 123);
    CHECK(back.state() == m.state());
    CHECK(back.config().to_key_values().entries() == c.to_key_values().entries());

    NamedTensors state = m.state();
    state.pop_back();
    CHECK_THROWS_AS(m.load_state(state), Error);
    state = m.state();
    state.push_back(state.front());
    CHECK_THROWS_AS(m.load_state(state), Error);
    state = m.state();
    state[0].second = Tensor({1});
    CHECK_THROWS_AS(m.load_state(state), Error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("clone is deep") {
    const Model m = Model::build(oracle::reduction_config(Variant::SSD4s), 1);
    const Model c = m.clone();
    c.param("backbone.stem.bias").mutable_value()[0] = 5.0;
    CHECK(m.param("backbone.stem.bias").value()[0] == 0.0);
  }
}
