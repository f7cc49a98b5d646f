#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "segfuse/data.hpp"
#include "segfuse/fmm.hpp"
#include "segfuse/gradsuite.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/trainer.hpp"

namespace py = pybind11;
using namespace segfuse;

namespace {

using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

SegMap to_segmap(const LabelArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("label array must be 2-D");
  SegMap m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

LabelArray from_segmap(const SegMap& m) {
  LabelArray out({m.height, m.width});
  std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
  return out;
}

ConfusionMatrix to_confusion(const std::vector<std::vector<std::uint64_t>>& rows) {
  return ConfusionMatrix::from_rows(rows);
}

py::dict scene_dict(const Scene& s) {
  py::array_t<double> image({std::size_t{3}, s.height(), s.width()});
  std::copy(s.image.values.begin(), s.image.values.end(), image.mutable_data());
  py::array_t<double> dsm({s.height(), s.width()});
  std::copy(s.dsm.values.begin(), s.dsm.values.end(), dsm.mutable_data());
  py::dict d;
  d["id"] = s.id;
  d["image"] = image;
  d["dsm"] = dsm;
  d["labels"] = from_segmap(s.labels);
  return d;
}

}  // namespace

PYBIND11_MODULE(_segfuse, m) {
  m.doc() = "Aerial image segmentation with image and elevation inputs";
  m.attr("NUM_CLASSES") = kNumClasses;
  m.attr("UNKNOWN") = SegMap::kUnknown;

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("synth_scene", [](std::uint64_t seed, std::size_t size) { return scene_dict(synth_scene(seed, size)); },
        py::arg("seed"), py::arg("size") = 64,
        "Procedural scene as a dict: image [3,H,W], dsm [H,W], labels [H,W] uint8.");

  m.def("inpaint", [](const LabelArray& labels) { return from_segmap(inpaint(to_segmap(labels))); },
        py::arg("labels"), "Fill UNKNOWN (255) pixels with the label of the nearest front.");
  m.def("eikonal_update", &eikonal_update, py::arg("horizontal"), py::arg("vertical"));
  m.def("erode_boundaries",
        [](const LabelArray& gt, double radius) {
          const ExclusionMask mask = erode_boundaries(to_segmap(gt), radius);
          py::array_t<bool> out({mask.height, mask.width});
          for (std::size_t i = 0; i < mask.excluded.size(); ++i) out.mutable_data()[i] = mask.excluded[i] != 0;
          return out;
        },
        py::arg("gt"), py::arg("radius") = 3.0, "True where a pixel is excluded from scoring.");

  m.def("kappa", [](const std::vector<std::vector<std::uint64_t>>& cm) { return kappa(to_confusion(cm)); },
        py::arg("confusion"));
  m.def("overall_accuracy",
        [](const std::vector<std::vector<std::uint64_t>>& cm) { return overall_accuracy(to_confusion(cm)); },
        py::arg("confusion"));
  m.def("f1", [](const std::vector<std::vector<std::uint64_t>>& cm, std::size_t i) { return f1(to_confusion(cm), i); },
        py::arg("confusion"), py::arg("class_id"));

  m.def("patch_count", &patch_count, py::arg("height"), py::arg("width"), py::arg("patch") = 256,
        py::arg("stride") = 32);
  m.def("lr_at",
        [](std::size_t epoch, const std::string& preset) {
          if (preset != "paper" && preset != "desk") throw std::invalid_argument("preset must be 'paper' or 'desk'");
          return lr_at(epoch, preset == "paper" ? TrainConfig::paper() : TrainConfig::desk());
        },
        py::arg("epoch"), py::arg("preset") = "paper");

  m.def("gradcheck",
        [](const std::string& module, std::uint64_t seed) {
          const std::vector<GradCase> cases = module == "all" ? gradient_cases() : gradient_cases_for(module);
          if (cases.empty()) throw std::invalid_argument("unknown module '" + module + "'");
          py::list out;
          for (const GradCase& c : cases) {
            const GradCheckResult r = c.run(seed);
            py::dict d;
            d["name"] = c.name;
            d["max_rel_error"] = r.max_rel_error;
            d["tolerance"] = c.tolerance();
            d["checked"] = r.checked;
            out.append(d);
          }
          return out;
        },
        py::arg("module") = "all", py::arg("seed") = 0);

  m.def("predict",
        [](const std::string& checkpoint, const std::string& scene_dir) {
          LoadedModel loaded = load_model(checkpoint);
          const Scene scene = load_scene(scene_dir);
          return from_segmap(predict(*loaded.model, loaded.info.stats, scene, loaded.info.config().patch));
        },
        py::arg("checkpoint"), py::arg("scene_dir"), "Label map for a scene directory from a checkpoint.");
}
