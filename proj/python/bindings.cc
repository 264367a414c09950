#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "aveloc/config.h"
#include "aveloc/errors.h"
#include "aveloc/harness.h"
#include "aveloc/losses.h"
#include "aveloc/postproc.h"

namespace py = pybind11;
using namespace aveloc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

// Accepts None, a JSON string or anything json.dumps can serialize.
Json json_of(const py::object& obj) {
  if (obj.is_none()) return Json::object();
  const std::string text = py::isinstance<py::str>(obj)
                               ? obj.cast<std::string>()
                               : py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

py::object to_python(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

PipelineConfig pipeline_of(const py::object& obj) { return pipeline_config_from_json(json_of(obj)); }

py::dict prediction_dict(const Prediction& p) {
  py::dict d;
  d["alpha"] = to_numpy(p.alpha);
  d["probs"] = to_numpy(p.probs);
  d["labels"] = p.labels;
  return d;
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["train_accuracy"] = m.train_accuracy;
  d["val_accuracy"] = m.val_accuracy;
  return d;
}

}  // namespace

PYBIND11_MODULE(_aveloc, m) {
  m.doc() = "Audio-visual event localization: multi-window temporal fusion on a float64 autodiff core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<LayoutError>(m, "LayoutError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("preset_config", [](const std::string& name) { return to_python(to_json(PipelineConfig::preset_named(name))); },
        py::arg("name") = "desk", "Full pipeline configuration of a named preset as a dict.");

  py::class_<AveSequence>(m, "Sequence")
      .def(py::init([](std::string id, const Array& video, const Array& audio,
                       const std::vector<std::size_t>& classes, std::size_t num_classes,
                       std::size_t background_class) {
             AveSequence s{std::move(id), from_numpy(video), from_numpy(audio),
                           AveLabels::from_classes(classes, num_classes, background_class)};
             s.validate();
             return s;
           }),
           py::arg("id"), py::arg("video"), py::arg("audio"), py::arg("classes"), py::arg("num_classes"),
           py::arg("background_class") = 0)
      .def_readonly("id", &AveSequence::id)
      .def_property_readonly("video", [](const AveSequence& s) { return to_numpy(s.video); })
      .def_property_readonly("audio", [](const AveSequence& s) { return to_numpy(s.audio); })
      .def_property_readonly("classes", [](const AveSequence& s) { return s.labels.classes(); })
      .def_property_readonly("events", [](const AveSequence& s) { return s.labels.events; })
      .def_property_readonly("steps", &AveSequence::steps)
      .def("__repr__", [](const AveSequence& s) {
        return "<Sequence '" + s.id + "' T=" + std::to_string(s.steps()) + ">";
      });

  m.def("synth_dataset", [](const py::object& cfg) { return synth_dataset(synth_config_from_json(json_of(cfg))); },
        py::arg("config") = py::none(), "Synthetic sequences; config keys as in the synth JSON.");
  m.def("nearest_signature_accuracy",
        [](const Dataset& data, const py::object& cfg) {
          const SynthConfig sc = synth_config_from_json(json_of(cfg));
          return nearest_signature_accuracy(data, synth_signatures(sc), sc.background_class);
        },
        py::arg("data"), py::arg("config") = py::none());
  m.def("write_features", [](const std::string& path, const AveSequence& s) { write_features(path, s); },
        py::arg("path"), py::arg("sequence"));
  m.def("read_features", [](const std::string& path) { return read_features(path); }, py::arg("path"));
  m.def("write_dataset", [](const std::string& dir, const Dataset& d) { write_dataset(dir, d); },
        py::arg("directory"), py::arg("data"));
  m.def("read_dataset", [](const std::string& dir) { return read_dataset(dir); }, py::arg("directory"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const py::object& cfg) { return Model(pipeline_of(cfg)); }), py::arg("config") = py::none())
      .def_property_readonly("config", [](const Model& md) { return to_python(to_json(md.config())); })
      .def_property_readonly("num_parameters", [](const Model& md) { return md.params().num_values(); })
      .def_property_readonly("parameter_names", [](const Model& md) { return md.params().names(); })
      .def("parameter", [](const Model& md, const std::string& name) { return to_numpy(md.params().get(name).value); },
           py::arg("name"))
      .def("predict", [](Model& md, const AveSequence& s) { return prediction_dict(predict(md, s)); },
           py::arg("sequence"))
      .def("evaluate",
           [](Model& md, const Dataset& d, std::optional<std::size_t> w) { return evaluate(md, d, w); },
           py::arg("data"), py::arg("post_window") = py::none())
      .def("save",
           [](const Model& md, const std::string& path) { save_checkpoint(path, Checkpoint{md, TrainingState{}}); },
           py::arg("path"))
      .def_static("load", [](const std::string& path) { return load_checkpoint(path).model; }, py::arg("path"));

  m.def("train",
        [](const Dataset& tr, const Dataset& val, const py::object& cfg,
           const std::optional<std::function<void(py::dict)>>& on_epoch) {
          const PipelineConfig pc = pipeline_of(cfg);
          EpochCallback cb;
          if (on_epoch) {
            cb = [&](const EpochMetrics& em) {
              py::gil_scoped_acquire gil;
              (*on_epoch)(metrics_dict(em));
            };
          }
          std::optional<TrainResult> r;
          {
            py::gil_scoped_release release;
            r.emplace(train(tr, val, pc, cb));
          }
          py::list metrics;
          for (const EpochMetrics& em : r->metrics) metrics.append(metrics_dict(em));
          return py::make_tuple(std::move(r->checkpoint.model), metrics);
        },
        py::arg("train"), py::arg("val"), py::arg("config") = py::none(), py::arg("on_epoch") = py::none(),
        "Train from the config's seed; returns (model, per-epoch metrics).");

  m.def("locality_filter",
        [](const std::vector<std::size_t>& p, std::size_t w) { return locality_filter(p, w); },
        py::arg("labels"), py::arg("window"));
  m.def("majority_filter",
        [](const std::vector<std::size_t>& p, std::size_t w) { return majority_filter(p, w); },
        py::arg("labels"), py::arg("window"));
  m.def("infonce",
        [](const Array& image, const Array& audio, double log_tau) {
          return infonce(ContrastiveBatch{from_numpy(image), from_numpy(audio), log_tau});
        },
        py::arg("image"), py::arg("audio"), py::arg("log_tau"),
        "Symmetric InfoNCE over L2-normalized rows; tau = exp(log_tau).");
}
