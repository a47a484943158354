#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drnet/synthetic.hpp"
#include "../support/oracles.hpp"

using namespace drnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("drnet_unit_" + name);
  fs::remove_all(p);
  return p;
}

// Channel 0 of a CHW image.
double pixel(const Tensor& img, std::size_t y, std::size_t x) {
  return img.values()[y * img.shape()[2] + x];
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("images are pure functions of spec and index") {
    SceneSpec spec;
    spec.seed = 5;
    const auto a = generate_images(spec, 6);
    CHECK(generate_image(spec, 4).image == a[4].image);
    CHECK(generate_image(spec, 4).objects == a[4].objects);
    spec.seed = 6;
    CHECK_FALSE(generate_image(spec, 4).image == a[4].image);
  }

  TEST_CASE("labels are tight, in bounds and within the class set") {
    SceneSpec spec;
    spec.seed = 8;
    for (const auto& img : generate_images(spec, 50)) {
      CHECK(img.image.shape() == Shape{1, 64, 64});
      CHECK(img.objects.size() <= 3);
      for (double v : img.image.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::abs(v * 255 - std::round(v * 255)) < 1e-9);
      }
      for (const auto& o : img.objects) {
        CHECK(o.label >= 1);
        CHECK(o.label <= 3);
        CHECK(o.box.x1() >= 0);
        CHECK(o.box.x2() <= 64);
        CHECK(o.box.w >= 6);
        CHECK(o.box.w == std::round(o.box.w));
      }
      // Without occlusion the boxes of one image never overlap.
      for (std::size_t i = 0; i < img.objects.size(); ++i)
        for (std::size_t j = i + 1; j < img.objects.size(); ++j)
          CHECK(jaccard(img.objects[i].box, img.objects[j].box) == 0.0);
    }
  }

  TEST_CASE("rendered shapes have the expected masks") {
    SceneSpec spec;
    spec.noise = 0.0;
    spec.canvas = 32;
    const Tensor bg({1, 32, 32}, 0.0);
    SceneObject sq{Shape2d::Square, 4, 6, 10, 0, 0, {1.0}};
    const auto img = render_scene(spec, {sq}, bg);
    REQUIRE(img.objects.size() == 1);
    CHECK(img.objects[0].box == box_from_corners(4, 6, 14, 16));
    CHECK(pixel(img.image, 6, 4) == 1.0);
    CHECK(pixel(img.image, 5, 4) == 0.0);
    SceneObject tri{Shape2d::Triangle, 0, 0, 12, 0, 0, {1.0}};
    const auto t = render_scene(spec, {tri}, bg);
    CHECK(pixel(t.image, 0, 0) == 0.0);   // apex is at the top centre
    CHECK(pixel(t.image, 11, 0) == 1.0);  // base spans the footprint
    CHECK(t.objects[0].label == 3);
    SceneObject circle{Shape2d::Circle, 10, 10, 10, 0, 0, {1.0}};
    const auto c = render_scene(spec, {circle}, bg);
    CHECK(pixel(c.image, 10, 10) == 0.0);  // corner outside the disc
    CHECK(pixel(c.image, 15, 15) == 1.0);
    spec.bounce = false;  // otherwise the start position is reflected into view
    SceneObject tiny{Shape2d::Square, 29, 0, 8, 0, 0, {1.0}};  // 3 px visible
    CHECK(render_scene(spec, {tiny}, bg).objects.empty());
    CHECK_THROWS_AS(render_scene(spec, {sq}, Tensor({1, 16, 16})), Error);
  }

  TEST_CASE("bounce position matches step-by-step reflection") {
    oracle::Gen g(71);
    for (int trial = 0; trial < 200; ++trial) {
      const int canvas = 64, size = g.integer(6, 40), v = g.integer(-5, 5);
      const int start = g.integer(0, canvas - size);
      CHECK(object_position(start, v, 0, size, canvas, true) == start);
      // Simulate with per-pixel reflection at the walls.
      int pos = start, vel = v;
      for (int t = 1; t <= 100; ++t) {
        for (int s = 0; s < std::abs(v); ++s) {
          if (pos + (vel > 0 ? 1 : -1) < 0 || pos + (vel > 0 ? 1 : -1) > canvas - size) vel = -vel;
          pos += vel > 0 ? 1 : -1;
        }
        CHECK(object_position(start, v, t, size, canvas, true) == pos);
      }
    }
    CHECK(object_position(5, 3, 4, 10, 64, false) == 17);
  }

  TEST_CASE("videos move continuously and prefixes agree") {
    SceneSpec spec;
    spec.seed = 9;
    spec.max_velocity = 3;
    const auto clip = generate_video(spec, 2, 20);
    CHECK(clip.name == "clip_0002");
    CHECK(clip.frames.size() == 20);
    const auto prefix = generate_video(spec, 2, 5);
    CHECK(prefix.frames[4].image == clip.frames[4].image);
    for (std::size_t t = 1; t < clip.frames.size(); ++t) {
      const auto& a = clip.frames[t - 1];
      const auto& b = clip.frames[t];
      for (std::size_t i = 0; i < b.objects.size(); ++i)
        for (std::size_t j = 0; j < a.objects.size(); ++j) {
          if (a.track_ids[j] != b.track_ids[i]) continue;
          CHECK(std::abs(a.objects[j].box.cx - b.objects[i].box.cx) <= 3.0);
          CHECK(std::abs(a.objects[j].box.cy - b.objects[i].box.cy) <= 3.0);
        }
    }
    // The noise field is fixed per video, so a static scene repeats exactly.
    spec.max_velocity = 0;
    const auto still = generate_video(spec, 0, 3);
    CHECK(still.frames[0].image == still.frames[2].image);
  }

  TEST_CASE("spec validation") {
    SceneSpec s;
    s.min_size = 4;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.max_size = 80;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.min_objects = 4;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.noise = 0.9;
    CHECK_THROWS_AS(s.validate(), Error);
  }

  TEST_CASE("pnm and image sets round trip") {
    const fs::path dir = fresh_dir("images");
    SceneSpec spec;
    spec.seed = 10;
    spec.color = true;
    const auto imgs = generate_images(spec, 4);
    CHECK(imgs[0].image.shape() == Shape{3, 64, 64});
    write_image_set(dir, imgs);
    const auto back = read_image_set(dir);
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(back[i].name == imgs[i].name);
      CHECK(back[i].image == imgs[i].image);
      CHECK(back[i].objects == imgs[i].objects);
    }
    std::ofstream(dir / "broken.pgm") << "P2\n1 1\n255\n0\n";
    CHECK_THROWS_AS(read_pnm(dir / "broken.pgm"), Error);
    std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\n\x01\x02";
    CHECK_THROWS_AS(read_pnm(dir / "short.pgm"), Error);
    fs::remove_all(dir);
  }

  TEST_CASE("video sets round trip and report missing frames") {
    const fs::path dir = fresh_dir("videos");
    SceneSpec spec;
    spec.seed = 11;
    const auto clips = generate_videos(spec, 2, 4);
    write_video_set(dir, clips);
    const auto back = read_video_set(dir);
    REQUIRE(back.size() == 2);
    CHECK(back[1].name == clips[1].name);
    CHECK(back[1].frames[3].image == clips[1].frames[3].image);
    CHECK(back[1].frames[3].objects == clips[1].frames[3].objects);
    CHECK(back[1].frames[3].track_ids == clips[1].frames[3].track_ids);
    fs::remove(dir / clips[0].name / clips[0].frames[2].name);
    CHECK_THROWS_AS(read_video_set(dir), Error);
    fs::remove_all(dir);
  }

  TEST_CASE("hflip mirrors pixels and boxes") {
    SceneSpec spec;
    spec.seed = 12;
    const auto img = generate_image(spec, 0);
    const auto f = hflip(img);
    CHECK(pixel(f.image, 3, 0) == pixel(img.image, 3, 63));
    for (std::size_t i = 0; i < img.objects.size(); ++i) {
      CHECK(f.objects[i].box.cx == 64 - img.objects[i].box.cx);
      CHECK(f.objects[i].box.w == img.objects[i].box.w);
    }
    CHECK(hflip(f).image == img.image);
    const Tensor stacked = stack_images({&img.image, &f.image});
    CHECK(stacked.shape() == Shape{2, 1, 64, 64});
    CHECK_THROWS_AS(stack_images({}), Error);
  }
}
