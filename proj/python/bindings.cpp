#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "drnet/box.hpp"
#include "drnet/config.hpp"
#include "drnet/evaluation.hpp"
#include "drnet/model.hpp"
#include "drnet/pipeline.hpp"
#include "drnet/synthetic.hpp"
#include "drnet/temporal.hpp"
#include "drnet/training.hpp"

namespace py = pybind11;
using namespace drnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

std::string value_text(const py::handle& v) {
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
  if (py::isinstance<py::int_>(v)) return std::to_string(v.cast<long long>());
  if (py::isinstance<py::float_>(v)) return format_double(v.cast<double>());
  if (py::isinstance<py::str>(v)) return v.cast<std::string>();
  if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
    std::string s;
    for (const auto& item : v) {
      if (!s.empty()) s += ',';
      s += value_text(item);
    }
    return s;
  }
  throw py::type_error("config values must be bool, int, float, str or a list of them");
}

/// Python dict -> key/value config, rejecting keys outside valid.
KeyValues to_kv(const py::dict& d, const std::vector<std::string>& valid) {
  KeyValues kv;
  for (const auto& [k, v] : d) kv.set(k.cast<std::string>(), value_text(v));
  kv.require_known(valid);
  return kv;
}

py::dict to_dict(const KeyValues& kv) {
  py::dict d;
  for (const auto& [k, v] : kv.entries()) d[py::str(k)] = v;
  return d;
}

SceneSpec scene_spec(const py::dict& d) {
  SceneSpec s;
  for (const auto& [key, value] : d) {
    const auto k = key.cast<std::string>();
    if (k == "seed") s.seed = value.cast<std::uint64_t>();
    else if (k == "canvas") s.canvas = value.cast<int>();
    else if (k == "min_objects") s.min_objects = value.cast<int>();
    else if (k == "max_objects") s.max_objects = value.cast<int>();
    else if (k == "min_size") s.min_size = value.cast<int>();
    else if (k == "max_size") s.max_size = value.cast<int>();
    else if (k == "max_velocity") s.max_velocity = value.cast<int>();
    else if (k == "occlusion") s.occlusion = value.cast<bool>();
    else if (k == "noise") s.noise = value.cast<double>();
    else if (k == "color") s.color = value.cast<bool>();
    else if (k == "bounce") s.bounce = value.cast<bool>();
    else throw py::key_error("unknown scene key '" + k + "'");
  }
  s.validate();
  return s;
}

PostprocessConfig post_config(double score_threshold, double nms_threshold, std::size_t top_k) {
  return PostprocessConfig{score_threshold, nms_threshold, top_k};
}

/// Splits a flat detection list into per-frame lists.
std::vector<std::vector<Detection>> by_frame(const std::vector<Detection>& dets, std::size_t frames) {
  std::vector<std::vector<Detection>> out(frames);
  for (const auto& d : dets) out.at(d.frame).push_back(d);
  return out;
}

}  // namespace

PYBIND11_MODULE(drnet, m) {
  m.doc() = "Dual refinement single-stage detector on synthetic scenes";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::class_<Box>(m, "Box")
      .def(py::init<double, double, double, double>(), py::arg("cx"), py::arg("cy"), py::arg("w"),
           py::arg("h"))
      .def_static("from_corners", &box_from_corners, py::arg("x1"), py::arg("y1"), py::arg("x2"),
                  py::arg("y2"))
      .def_readwrite("cx", &Box::cx)
      .def_readwrite("cy", &Box::cy)
      .def_readwrite("w", &Box::w)
      .def_readwrite("h", &Box::h)
      .def("corners", [](const Box& b) { return py::make_tuple(b.x1(), b.y1(), b.x2(), b.y2()); })
      .def("area", &Box::area)
      .def(py::self == py::self)
      .def("__repr__", [](const Box& b) {
        return "Box(cx=" + format_double(b.cx) + ", cy=" + format_double(b.cy) + ", w=" + format_double(b.w) +
               ", h=" + format_double(b.h) + ")";
      });

  m.def("jaccard", &jaccard, py::arg("a"), py::arg("b"));
  m.def(
      "encode",
      [](const Box& gt, const Box& anchor, double cv, double sv) {
        return encode(gt, anchor, OffsetCoding{cv, sv});
      },
      py::arg("gt"), py::arg("anchor"), py::arg("center_variance") = 0.1, py::arg("size_variance") = 0.2);
  m.def(
      "decode",
      [](const BoxOffsets& t, const Box& anchor, double cv, double sv) {
        return decode(t, anchor, OffsetCoding{cv, sv});
      },
      py::arg("offsets"), py::arg("anchor"), py::arg("center_variance") = 0.1, py::arg("size_variance") = 0.2);

  py::class_<LabeledImage>(m, "LabeledImage")
      .def(py::init([](const Array& image, const std::vector<Box>& boxes, const std::vector<int>& labels) {
             DRNET_CHECK(image.ndim() == 3, "image must be [C,H,W]");
             DRNET_CHECK(boxes.size() == labels.size(), "boxes and labels differ in length");
             LabeledImage img;
             img.image = from_numpy(image);
             for (std::size_t i = 0; i < boxes.size(); ++i) img.objects.push_back({boxes[i], labels[i]});
             return img;
           }),
           py::arg("image"), py::arg("boxes") = std::vector<Box>{}, py::arg("labels") = std::vector<int>{})
      .def_readonly("name", &LabeledImage::name)
      .def_property_readonly("image", [](const LabeledImage& i) { return to_numpy(i.image); })
      .def_property_readonly("boxes",
                             [](const LabeledImage& i) {
                               std::vector<Box> b;
                               for (const auto& o : i.objects) b.push_back(o.box);
                               return b;
                             })
      .def_property_readonly("labels",
                             [](const LabeledImage& i) {
                               std::vector<int> l;
                               for (const auto& o : i.objects) l.push_back(o.label);
                               return l;
                             })
      .def_readonly("track_ids", &LabeledImage::track_ids)
      .def("hflip", &hflip);

  m.def(
      "generate_images",
      [](std::size_t count, const py::kwargs& spec) { return generate_images(scene_spec(spec), count); },
      py::arg("count"), "Synthetic still images; keyword arguments set scene parameters (seed, canvas, ...).");
  m.def(
      "generate_video",
      [](std::size_t index, int frames, const py::kwargs& spec) {
        return generate_video(scene_spec(spec), index, frames).frames;
      },
      py::arg("index"), py::arg("frames"), "Frames of one synthetic clip.");
  m.def("read_image_set", [](const std::string& dir) { return read_image_set(dir); }, py::arg("dir"));
  m.def("write_image_set", [](const std::string& dir, const std::vector<LabeledImage>& images) {
    write_image_set(dir, images);
  });

  py::class_<Detection>(m, "Detection")
      .def_readonly("frame", &Detection::frame)
      .def_readonly("label", &Detection::label)
      .def_readonly("score", &Detection::score)
      .def_readonly("box", &Detection::box)
      .def_readonly("anchor", &Detection::anchor)
      .def(py::self == py::self)
      .def("__repr__", [](const Detection& d) {
        return "Detection(frame=" + std::to_string(d.frame) + ", label=" + std::to_string(d.label) +
               ", score=" + format_double(d.score) + ")";
      });

  m.def("nms", &nms, py::arg("detections"), py::arg("iou_threshold") = 0.45);

  py::class_<Model>(m, "Model")
      .def(py::init([](const py::dict& config, std::uint64_t seed) {
             return Model::build(ModelConfig::from_key_values(to_kv(config, ModelConfig::keys())), seed);
           }),
           py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def_static("load", [](const std::string& stem) { return load_checkpoint(stem); }, py::arg("stem"))
      .def("save", [](const Model& mdl, const std::string& stem) { save_checkpoint(mdl, stem); },
           py::arg("stem"))
      .def("clone", &Model::clone)
      .def_property_readonly("config", [](const Model& mdl) { return to_dict(mdl.config().to_key_values()); })
      .def_property_readonly("variant", [](const Model& mdl) { return to_string(mdl.config().variant); })
      .def_readonly("step", &Model::step)
      .def("parameter_count", &Model::parameter_count)
      .def("parameters",
           [](const Model& mdl) {
             py::dict d;
             for (const auto& [name, var] : mdl.parameters()) d[py::str(name)] = to_numpy(var.value());
             return d;
           })
      .def("set_parameter",
           [](const Model& mdl, const std::string& name, const Array& value) {
             const Tensor t = from_numpy(value);
             Tensor& dst = mdl.param(name).mutable_value();
             DRNET_CHECK(t.shape() == dst.shape(), "parameter ", name, " is ", shape_str(dst.shape()),
                         ", got ", shape_str(t.shape()));
             dst = t;
           })
      .def_property_readonly("anchors", [](const Model& mdl) { return mdl.anchors().boxes; })
      .def(
          "detect",
          [](const Model& mdl, const std::vector<LabeledImage>& images, double score, double nms_t,
             std::size_t top_k) {
            py::gil_scoped_release release;
            return by_frame(detect_images(mdl, images, post_config(score, nms_t, top_k)), images.size());
          },
          py::arg("images"), py::arg("score_threshold") = 0.01, py::arg("nms_threshold") = 0.45,
          py::arg("top_k") = 200, "Per-image detections in canonical order.")
      .def(
          "stream",
          [](const Model& mdl, const std::vector<LabeledImage>& frames, int k, double e) {
            StreamOptions so;
            so.schedule = {k, e};
            StreamResult r;
            {
              py::gil_scoped_release release;
              r = stream_detect(mdl, frames, so);
            }
            py::dict d;
            d["frames"] = r.frames;
            d["key_frames"] = r.key_frames;
            d["rg_calls"] = r.rg_calls;
            d["rd_calls"] = r.rd_calls;
            return d;
          },
          py::arg("frames"), py::arg("k") = 1, py::arg("e") = 1.0,
          "Key-frame streaming detection with a temporal model.");

  m.def(
      "train",
      [](Model& mdl, const std::vector<LabeledImage>& images, const py::dict& config) {
        const TrainConfig tc = TrainConfig::from_key_values(to_kv(config, TrainConfig::keys()));
        std::vector<MetricsRow> rows;
        {
          py::gil_scoped_release release;
          train(mdl, images, tc, [&](const MetricsRow& r) { rows.push_back(r); });
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["step"] = r.step;
          d["loss"] = r.loss.total;
          d["loc_arm"] = r.loss.loc_arm;
          d["loc_odm"] = r.loss.loc_odm;
          d["conf"] = r.loss.conf;
          d["lr"] = r.lr;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("images"), py::arg("config") = py::dict(),
      "Trains in place; returns the logged metrics rows.");

  m.def(
      "evaluate",
      [](const std::vector<std::vector<Detection>>& per_frame, const std::vector<LabeledImage>& images,
         int num_classes, double iou_threshold) {
        DRNET_CHECK(per_frame.size() == images.size(), "one detection list per image is required");
        std::vector<Detection> flat;
        for (std::size_t f = 0; f < per_frame.size(); ++f) {
          for (Detection d : per_frame[f]) {
            d.frame = f;
            flat.push_back(d);
          }
        }
        const Evaluation ev = evaluate(flat, image_truth(images), num_classes, iou_threshold);
        py::dict d;
        d["map"] = ev.map;
        py::list aps;
        for (const auto& c : ev.classes) aps.append(c.ap ? py::cast(*c.ap) : py::none());
        d["ap"] = aps;
        d["warnings"] = ev.warnings;
        return d;
      },
      py::arg("detections"), py::arg("images"), py::arg("num_classes") = 3, py::arg("iou_threshold") = 0.5,
      "mAP of per-image detections against the images' labels.");

  m.def(
      "sweep",
      [](const Model& mdl, const std::vector<std::vector<LabeledImage>>& clips, const std::vector<int>& ks,
         const std::vector<double>& es) {
        std::vector<VideoClip> vc;
        for (std::size_t i = 0; i < clips.size(); ++i) vc.push_back({"clip_" + std::to_string(i), clips[i]});
        SweepOptions so;
        so.ks = ks;
        so.es = es;
        std::vector<SweepRow> rows;
        {
          py::gil_scoped_release release;
          rows = sweep(mdl, vc, so);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["k"] = r.k;
          d["e"] = r.e;
          d["map"] = r.map;
          d["rg_calls"] = r.rg_calls;
          d["rd_calls"] = r.rd_calls;
          d["ms_per_frame"] = r.ms_per_frame;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("clips"), py::arg("ks") = std::vector<int>{1, 2, 4, 8},
      py::arg("es") = std::vector<double>{1.0, 0.75, 0.5});
}
