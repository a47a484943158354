#include "drnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

namespace drnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Small self-contained generator so datasets do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return splitmix(state_++); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  int integer(int lo, int hi) {  // inclusive
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next() % span);
  }

 private:
  std::uint64_t state_;
};

constexpr std::uint64_t kImageStream = 0x696d616765ull;
constexpr std::uint64_t kVideoStream = 0x766964656full;

Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::size_t index) {
  return Rng(splitmix(splitmix(seed ^ stream) + index));
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

bool inside(Shape2d shape, int size, double u, double v) {
  const double s = size;
  switch (shape) {
    case Shape2d::Square: return u >= 0 && u < s && v >= 0 && v < s;
    case Shape2d::Circle: {
      const double r = 0.5 * s;
      return (u - r) * (u - r) + (v - r) * (v - r) <= r * r;
    }
    case Shape2d::Triangle: return v >= 0 && v <= s && 2.0 * std::abs(u - 0.5 * s) <= v;
  }
  return false;
}

struct Backdrop {
  std::vector<double> level;
  Tensor noise;
};

Backdrop make_backdrop(const SceneSpec& spec, Rng& rng) {
  Backdrop b;
  const auto c = static_cast<std::size_t>(spec.channels());
  const auto n = static_cast<std::size_t>(spec.canvas);
  const double base = rng.uniform(0.0, 0.3);
  for (std::size_t i = 0; i < c; ++i) b.level.push_back(spec.color ? rng.uniform(0.0, 0.3) : base);
  b.noise = Tensor({c, n, n});
  for (double& v : b.noise.values()) v = rng.uniform(-spec.noise, spec.noise);
  return b;
}

Tensor backdrop_image(const SceneSpec& spec, const Backdrop& b) {
  Tensor img = b.noise;
  const std::size_t plane = static_cast<std::size_t>(spec.canvas) * spec.canvas;
  for (std::size_t c = 0; c < b.level.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) img[c * plane + p] += b.level[c];
  }
  return img;
}

bool overlaps(const SceneObject& a, const SceneObject& b) {
  return a.x < b.x + b.size && b.x < a.x + a.size && a.y < b.y + b.size && b.y < a.y + a.size;
}

std::vector<SceneObject> sample_objects(const SceneSpec& spec, Rng& rng, bool moving) {
  const int count = rng.integer(spec.min_objects, spec.max_objects);
  std::vector<SceneObject> out;
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      SceneObject o;
      o.shape = static_cast<Shape2d>(rng.integer(1, kShapeClasses));
      o.size = rng.integer(spec.min_size, spec.max_size);
      o.x = rng.integer(0, spec.canvas - o.size);
      o.y = rng.integer(0, spec.canvas - o.size);
      if (moving) {
        o.vx = rng.integer(-spec.max_velocity, spec.max_velocity);
        o.vy = rng.integer(-spec.max_velocity, spec.max_velocity);
      }
      if (spec.color) {
        for (int c = 0; c < 3; ++c) o.color.push_back(rng.uniform(0.3, 1.0));
        o.color[static_cast<std::size_t>(rng.integer(0, 2))] = rng.uniform(0.7, 1.0);
      } else {
        o.color.push_back(rng.uniform(0.55, 1.0));
      }
      const bool clash = !spec.occlusion && std::any_of(out.begin(), out.end(), [&](const auto& p) {
        return overlaps(o, p);
      });
      if (!clash) {
        out.push_back(std::move(o));
        break;
      }
    }
  }
  return out;
}

LabeledImage render(const SceneSpec& spec, const Backdrop& backdrop,
                    const std::vector<SceneObject>& objects, int t) {
  LabeledImage out;
  out.image = backdrop_image(spec, backdrop);
  const int n = spec.canvas;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  for (std::size_t id = 0; id < objects.size(); ++id) {
    const SceneObject& o = objects[id];
    DRNET_CHECK(o.color.size() == static_cast<std::size_t>(spec.channels()),
                "scene object color has ", o.color.size(), " channels, image has ", spec.channels());
    const int x = object_position(o.x, o.vx, t, o.size, n, spec.bounce);
    const int y = object_position(o.y, o.vy, t, o.size, n, spec.bounce);
    int x1 = n, y1 = n, x2 = -1, y2 = -1;
    for (int py = std::max(y, 0); py < std::min(y + o.size, n); ++py) {
      for (int px = std::max(x, 0); px < std::min(x + o.size, n); ++px) {
        if (!inside(o.shape, o.size, px + 0.5 - x, py + 0.5 - y)) continue;
        const std::size_t p = static_cast<std::size_t>(py) * n + px;
        for (std::size_t c = 0; c < o.color.size(); ++c) {
          out.image[c * plane + p] = o.color[c] + backdrop.noise[c * plane + p];
        }
        x1 = std::min(x1, px);
        y1 = std::min(y1, py);
        x2 = std::max(x2, px);
        y2 = std::max(y2, py);
      }
    }
    if (x2 - x1 + 1 < 6 || y2 - y1 + 1 < 6) continue;  // (nearly) out of view
    out.objects.push_back(GroundTruth{box_from_corners(x1, y1, x2 + 1, y2 + 1), static_cast<int>(o.shape)});
    out.track_ids.push_back(static_cast<int>(id));
  }
  for (double& v : out.image.values()) v = quantize(v);
  return out;
}

std::string frame_name(std::size_t i, bool color) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.%s", i, color ? "ppm" : "pgm");
  return buf;
}

nlohmann::ordered_json boxes_json(const LabeledImage& img) {
  nlohmann::ordered_json boxes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < img.objects.size(); ++i) {
    const auto& g = img.objects[i];
    nlohmann::ordered_json b;
    b["cx"] = g.box.cx;
    b["cy"] = g.box.cy;
    b["w"] = g.box.w;
    b["h"] = g.box.h;
    b["class"] = g.label;
    if (i < img.track_ids.size()) b["track"] = img.track_ids[i];
    boxes.push_back(b);
  }
  return boxes;
}

void write_annotations(const fs::path& path, const std::vector<const LabeledImage*>& images) {
  std::ofstream os(path, std::ios::binary);
  DRNET_CHECK(os, "cannot write ", path.string());
  for (const LabeledImage* img : images) {
    nlohmann::ordered_json line;
    line["file"] = img->name;
    line["boxes"] = boxes_json(*img);
    os << line.dump() << '\n';
  }
  DRNET_CHECK(os, "write failed: ", path.string());
}

// file -> (objects, track ids)
std::map<std::string, LabeledImage> read_annotations(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  DRNET_CHECK(is, "cannot open ", path.string());
  std::map<std::string, LabeledImage> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fail = [&](const std::string& what) {
      return Error(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    LabeledImage img;
    try {
      const json j = json::parse(line);
      img.name = j.at("file").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        GroundTruth g{Box{b.at("cx").get<double>(), b.at("cy").get<double>(), b.at("w").get<double>(),
                          b.at("h").get<double>()},
                      b.at("class").get<int>()};
        if (!g.box.valid() || g.label < 1) throw fail("invalid box or class");
        img.objects.push_back(g);
        if (b.contains("track")) img.track_ids.push_back(b.at("track").get<int>());
      }
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
    if (img.name.empty() || img.name.find('/') != std::string::npos || img.name.find('\\') != std::string::npos) {
      throw fail("file must be a plain file name");
    }
    const std::string name = img.name;
    if (!out.emplace(name, std::move(img)).second) throw fail("duplicate entry for " + name);
  }
  return out;
}

}  // namespace

void SceneSpec::validate() const {
  DRNET_CHECK(canvas >= 16, "canvas must be >= 16 px, got ", canvas);
  DRNET_CHECK(min_objects >= 0 && min_objects <= max_objects, "object count range [", min_objects,
              ",", max_objects, "] is empty");
  DRNET_CHECK(min_size >= 6 && min_size <= max_size, "size range [", min_size, ",", max_size,
              "] must be non-empty with sizes >= 6");
  DRNET_CHECK(max_size <= canvas, "max size ", max_size, " exceeds the canvas ", canvas);
  DRNET_CHECK(max_velocity >= 0, "max velocity must be >= 0");
  DRNET_CHECK(noise >= 0.0 && noise <= 0.5, "noise must be in [0, 0.5]");
}

LabeledImage render_scene(const SceneSpec& spec, const std::vector<SceneObject>& objects,
                          const Tensor& background) {
  spec.validate();
  const auto c = static_cast<std::size_t>(spec.channels());
  const auto n = static_cast<std::size_t>(spec.canvas);
  DRNET_CHECK(background.shape() == Shape({c, n, n}), "background must be ",
              shape_str(Shape{c, n, n}), ", got ", shape_str(background.shape()));
  Backdrop b{std::vector<double>(c, 0.0), background};
  return render(spec, b, objects, 0);
}

LabeledImage generate_image(const SceneSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng = stream_rng(spec.seed, kImageStream, index);
  const Backdrop backdrop = make_backdrop(spec, rng);
  const auto objects = sample_objects(spec, rng, false);
  LabeledImage img = render(spec, backdrop, objects, 0);
  img.name = frame_name(index, spec.color);
  img.track_ids.clear();
  return img;
}

std::vector<LabeledImage> generate_images(const SceneSpec& spec, std::size_t count) {
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_image(spec, i));
  return out;
}

int object_position(int start, int velocity, int t, int size, int canvas, bool bounce) {
  const int p = start + velocity * t;
  if (!bounce) return p;
  const int range = canvas - size;
  if (range <= 0) return 0;
  const int period = 2 * range;
  const int m = ((p % period) + period) % period;
  return m <= range ? m : period - m;
}

VideoClip generate_video(const SceneSpec& spec, std::size_t index, int frames) {
  spec.validate();
  DRNET_CHECK(frames >= 1, "a video needs at least one frame");
  Rng rng = stream_rng(spec.seed, kVideoStream, index);
  const Backdrop backdrop = make_backdrop(spec, rng);
  const auto objects = sample_objects(spec, rng, true);
  VideoClip clip;
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04zu", index);
  clip.name = buf;
  for (int t = 0; t < frames; ++t) {
    LabeledImage f = render(spec, backdrop, objects, t);
    f.name = frame_name(static_cast<std::size_t>(t), spec.color);
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

std::vector<VideoClip> generate_videos(const SceneSpec& spec, std::size_t count, int frames) {
  std::vector<VideoClip> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_video(spec, i, frames));
  return out;
}

void write_pnm(const fs::path& path, const Tensor& image) {
  DRNET_CHECK(image.rank() == 3 && (image.extent(0) == 1 || image.extent(0) == 3),
              "write_pnm: expected [1|3,H,W], got ", shape_str(image.shape()));
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  std::ofstream os(path, std::ios::binary);
  DRNET_CHECK(os, "cannot write ", path.string());
  os << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::string bytes(c * h * w, '\0');
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      const double v = std::clamp(image[k * h * w + p], 0.0, 1.0);
      bytes[p * c + k] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  DRNET_CHECK(os, "write failed: ", path.string());
}

Tensor read_pnm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  DRNET_CHECK(is, "cannot open image ", path.string());
  const auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t += ch;
      }
    }
    DRNET_CHECK(!t.empty(), path.string(), ": truncated header");
    return t;
  };
  const std::string magic = token();
  DRNET_CHECK(magic == "P5" || magic == "P6", path.string(), ": unsupported format ", magic);
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw Error(path.string() + ": malformed header");
  }
  DRNET_CHECK(maxval == 255 && w > 0 && h > 0, path.string(), ": expected 8-bit image");
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::string bytes(c * h * w, '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  DRNET_CHECK(is.gcount() == static_cast<std::streamsize>(bytes.size()), path.string(),
              ": truncated pixel data");
  Tensor out({c, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      out[k * h * w + p] = static_cast<unsigned char>(bytes[p * c + k]) / 255.0;
    }
  }
  return out;
}

void write_image_set(const fs::path& dir, const std::vector<LabeledImage>& images) {
  fs::create_directories(dir);
  std::vector<const LabeledImage*> ptrs;
  for (const auto& img : images) {
    write_pnm(dir / img.name, img.image);
    ptrs.push_back(&img);
  }
  write_annotations(dir / "annotations.jsonl", ptrs);
}

std::vector<LabeledImage> read_image_set(const fs::path& dir) {
  auto entries = read_annotations(dir / "annotations.jsonl");
  std::vector<LabeledImage> out;
  for (auto& [name, img] : entries) {  // map order == sorted by file name
    img.image = read_pnm(dir / name);
    out.push_back(std::move(img));
  }
  return out;
}

void write_video_set(const fs::path& dir, const std::vector<VideoClip>& clips) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["clips"] = nlohmann::ordered_json::array();
  for (const auto& clip : clips) {
    const fs::path clip_dir = dir / clip.name;
    fs::create_directories(clip_dir);
    std::vector<const LabeledImage*> ptrs;
    nlohmann::ordered_json frames = nlohmann::ordered_json::array();
    for (const auto& f : clip.frames) {
      write_pnm(clip_dir / f.name, f.image);
      ptrs.push_back(&f);
      frames.push_back(f.name);
    }
    write_annotations(clip_dir / "annotations.jsonl", ptrs);
    nlohmann::ordered_json entry;
    entry["name"] = clip.name;
    entry["frames"] = frames;
    manifest["clips"].push_back(entry);
  }
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  DRNET_CHECK(os, "cannot write manifest in ", dir.string());
  os << manifest.dump(1) << '\n';
}

std::vector<VideoClip> read_video_set(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path, std::ios::binary);
  DRNET_CHECK(is, "cannot open ", manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(manifest_path.string() + ": " + e.what());
  }
  std::vector<VideoClip> out;
  try {
    for (const auto& entry : manifest.at("clips")) {
      VideoClip clip;
      clip.name = entry.at("name").get<std::string>();
      const fs::path clip_dir = dir / clip.name;
      auto annotations = read_annotations(clip_dir / "annotations.jsonl");
      for (const auto& frame : entry.at("frames")) {
        const std::string name = frame.get<std::string>();
        DRNET_CHECK(fs::exists(clip_dir / name), "clip ", clip.name, ": missing frame ", name);
        auto it = annotations.find(name);
        DRNET_CHECK(it != annotations.end(), "clip ", clip.name, ": frame ", name,
                    " has no annotation line");
        LabeledImage img = std::move(it->second);
        img.image = read_pnm(clip_dir / name);
        clip.frames.push_back(std::move(img));
      }
      DRNET_CHECK(!clip.frames.empty(), "clip ", clip.name, " lists no frames");
      out.push_back(std::move(clip));
    }
  } catch (const json::exception& e) {
    throw Error(manifest_path.string() + ": " + e.what());
  }
  return out;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  DRNET_CHECK(!images.empty(), "stack_images: no images");
  const Shape& s = images[0]->shape();
  DRNET_CHECK(s.size() == 3, "stack_images: expected [C,H,W], got ", shape_str(s));
  Tensor out({images.size(), s[0], s[1], s[2]});
  const std::size_t n = images[0]->numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    DRNET_CHECK(images[i]->shape() == s, "stack_images: image ", i, " has shape ",
                shape_str(images[i]->shape()), ", expected ", shape_str(s));
    std::copy(images[i]->data(), images[i]->data() + n, out.data() + i * n);
  }
  return out;
}

LabeledImage hflip(const LabeledImage& sample) {
  LabeledImage out = sample;
  const Tensor& x = sample.image;
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t i = 0; i < w; ++i) {
        out.image[(k * h + y) * w + i] = x[(k * h + y) * w + (w - 1 - i)];
      }
    }
  }
  for (auto& g : out.objects) g.box.cx = static_cast<double>(w) - g.box.cx;
  return out;
}

}  // namespace drnet
