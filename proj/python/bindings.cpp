#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kpn/checkpoint.hpp"
#include "kpn/cli.hpp"
#include "kpn/data.hpp"
#include "kpn/eval.hpp"
#include "kpn/geometry.hpp"
#include "kpn/track.hpp"

namespace py = pybind11;
using namespace kpn;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// HxWx3 array <-> planar Image.
Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an HxWx3 array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  Image img(3, h, w);
  auto v = a.unchecked<3>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) img.at(c, y, x) = v(y, x, c);
    }
  }
  return img;
}

FloatArray to_array(const Image& img) {
  FloatArray a({img.height(), img.width(), img.channels()});
  auto v = a.mutable_unchecked<3>();
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) v(y, x, c) = img.at(c, y, x);
    }
  }
  return a;
}

py::dict ope_dict(const OpeResult& r) {
  py::dict d;
  d["precision_curve"] = r.precision_curve;
  d["success_curve"] = r.success_curve;
  d["precision_at_20"] = r.precision_at_20;
  d["auc"] = r.auc;
  d["mean_iou"] = r.mean_iou;
  d["frames"] = r.frames;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Keypoint-cascade Siamese tracker";

  py::class_<BoundingBox>(m, "BoundingBox")
      .def(py::init<>())
      .def(py::init([](double cx, double cy, double w, double h) { return BoundingBox{cx, cy, w, h}; }),
           py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
      .def_static("from_xywh", &BoundingBox::from_xywh, py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"))
      .def_readwrite("cx", &BoundingBox::cx)
      .def_readwrite("cy", &BoundingBox::cy)
      .def_readwrite("w", &BoundingBox::w)
      .def_readwrite("h", &BoundingBox::h)
      .def("xywh", [](const BoundingBox& b) { return py::make_tuple(b.left(), b.cy - b.h / 2, b.w, b.h); })
      .def("__eq__", [](const BoundingBox& a, const BoundingBox& b) { return a == b; })
      .def("__repr__", [](const BoundingBox& b) {
        std::ostringstream s;
        s << "BoundingBox(cx=" << b.cx << ", cy=" << b.cy << ", w=" << b.w << ", h=" << b.h << ")";
        return s.str();
      });

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("penalty", &penalty, py::arg("candidate"), py::arg("previous"), py::arg("k"));

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("width", &SynthConfig::width)
      .def_readwrite("height", &SynthConfig::height)
      .def_readwrite("length", &SynthConfig::length)
      .def_readwrite("n_distractors", &SynthConfig::n_distractors)
      .def_readwrite("min_size", &SynthConfig::min_size)
      .def_readwrite("max_size", &SynthConfig::max_size)
      .def_readwrite("occluder_prob", &SynthConfig::occluder_prob)
      .def_readwrite("noise", &SynthConfig::noise)
      .def_readwrite("seed", &SynthConfig::seed);

  // Frames as HxWx3 float arrays, boxes with None for absent targets.
  m.def(
      "synth_sequence",
      [](const SynthConfig& cfg) {
        const Sequence s = synth_sequence(cfg);
        py::list frames;
        for (const Image& f : s.frames) frames.append(to_array(f));
        return py::make_tuple(frames, s.boxes);
      },
      py::arg("config"));

  py::class_<TrackHyper>(m, "TrackHyper")
      .def(py::init<>())
      .def_readwrite("score_threshold", &TrackHyper::score_threshold)
      .def_readwrite("k_min", &TrackHyper::k_min)
      .def_readwrite("k_max", &TrackHyper::k_max)
      .def_readwrite("penalty_k", &TrackHyper::penalty_k)
      .def_readwrite("window_influence", &TrackHyper::window_influence)
      .def_readwrite("size_lr", &TrackHyper::size_lr);

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](int n_stages, int channels, std::uint64_t seed) {
             ModelConfig cfg;
             cfg.n_stages = n_stages;
             cfg.channels = channels;
             return Model<float>(cfg, seed);
           }),
           py::arg("n_stages") = 3, py::arg("channels") = 8, py::arg("seed") = 0)
      .def_static("load", [](const std::string& dir) { return load_model<float>(dir); }, py::arg("checkpoint"))
      .def_property_readonly("n_stages", [](const Model<float>& mdl) { return mdl.config().n_stages; })
      .def("checksum", &Model<float>::checksum);

  py::class_<KpnTracker>(m, "Tracker")
      .def(py::init<Model<float>&, const TrackHyper&>(), py::arg("model"), py::arg("hyper") = TrackHyper{},
           py::keep_alive<1, 2>())
      .def(
          "init", [](KpnTracker& t, const FloatArray& frame, const BoundingBox& box) { t.init(to_image(frame), box); },
          py::arg("frame"), py::arg("box"))
      .def(
          "update",
          [](KpnTracker& t, const FloatArray& frame) {
            const TrackOutput out = t.update(to_image(frame));
            return py::make_tuple(out.box, out.score);
          },
          py::arg("frame"))
      .def("template_checksum", &KpnTracker::template_checksum);

  m.def(
      "ope_metrics", [](const Trajectory& traj, const GroundTruth& gt) { return ope_dict(ope_metrics(traj, gt)); },
      py::arg("trajectory"), py::arg("ground_truth"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "kpntrack");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line; returns (exit_code, stdout, stderr).");
}
