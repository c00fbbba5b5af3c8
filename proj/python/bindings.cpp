#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "watchhar/archive.hpp"
#include "watchhar/error.hpp"
#include "watchhar/eventlog.hpp"
#include "watchhar/fixtures.hpp"
#include "watchhar/metrics.hpp"
#include "watchhar/models.hpp"
#include "watchhar/presets.hpp"
#include "watchhar/stream.hpp"

namespace py = pybind11;
using namespace watchhar;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  const Tensor f = t.to_f32();
  std::vector<py::ssize_t> shape(f.shape().begin(), f.shape().end());
  FloatArray out(shape);
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

py::dict event_dict(const stream::PredictionEvent& e) {
  py::dict d;
  const auto j = event_to_json(e);
  for (const auto& [k, v] : j.items()) {
    if (v.is_number_integer()) d[py::str(k)] = v.get<long long>();
    else if (v.is_number()) d[py::str(k)] = v.get<double>();
    else if (v.is_string()) d[py::str(k)] = v.get<std::string>();
    else if (v.is_array()) d[py::str(k)] = v.get<std::vector<double>>();
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Streaming two-stage IMU/audio activity recognizer";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<OverflowError>(m, "OverflowError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
  py::register_exception<VersionError>(m, "VersionError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<StreamError>(m, "StreamError", base.ptr());
  py::register_exception<RateError>(m, "RateError", base.ptr());
  py::register_exception<NotReadyError>(m, "NotReadyError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());

  m.def("preset_names", &preset_names);
  m.def(
      "to_f16_roundtrip", [](const FloatArray& a) { return to_array(to_f16_roundtrip(to_tensor(a), "array")); },
      py::arg("values"));

  py::class_<WeightArchive>(m, "WeightArchive")
      .def_static("read", [](const std::filesystem::path& p) { return read_archive(p); })
      .def("write", [](const WeightArchive& a, const std::filesystem::path& p) { write_archive(a, p); })
      .def_property_readonly("version", &WeightArchive::version)
      .def_property_readonly("config", [](const WeightArchive& a) { return a.config_text(); })
      .def_property_readonly("names",
                             [](const WeightArchive& a) {
                               std::vector<std::string> n;
                               for (const auto& e : a.entries()) n.push_back(e.name);
                               return n;
                             })
      .def_property_readonly("payload_bytes", &WeightArchive::payload_bytes)
      .def("tensor", [](const WeightArchive& a, const std::string& name) { return to_array(a.at(name)); })
      .def("dtype", [](const WeightArchive& a, const std::string& name) {
        return std::string(dtype_name(a.at(name).dtype()));
      })
      .def("quantize_f16", [](const WeightArchive& a) { return models::quantize_archive_f16(a); })
      .def("__len__", [](const WeightArchive& a) { return a.entries().size(); })
      .def("__eq__", [](const WeightArchive& a, const WeightArchive& b) { return a == b; });

  m.def(
      "power_stft",
      [](const FloatArray& audio, const std::string& preset_name) {
        return to_array(dsp::power_stft(to_tensor(audio), preset(preset_name).stft));
      },
      py::arg("audio"), py::arg("preset") = "samosa-1k");
  m.def(
      "naive_dft_power",
      [](const FloatArray& frame) { return to_array(dsp::naive_dft_oracle(to_tensor(frame))); }, py::arg("frame"));
  m.def(
      "mel_filterbank",
      [](const std::string& preset_name) {
        const auto& p = preset(preset_name);
        return to_array(dsp::build_mel_filterbank(p.stft, p.mel));
      },
      py::arg("preset") = "samosa-1k");
  m.def(
      "logmel",
      [](const FloatArray& audio, const std::string& preset_name) {
        const auto& p = preset(preset_name);
        return to_array(dsp::logmel(to_tensor(audio), p.stft, dsp::build_mel_filterbank(p.stft, p.mel), p.db));
      },
      py::arg("audio"), py::arg("preset") = "samosa-1k");

  m.def(
      "count_flops",
      [](const std::string& preset_name) {
        const auto f = models::count_flops(fixtures::default_config(preset(preset_name)));
        py::dict d;
        d["detector"] = f.detector;
        d["frontend"] = f.frontend;
        d["imu_encoder"] = f.imu_encoder;
        d["audio_encoder"] = f.audio_encoder;
        d["fusion"] = f.fusion;
        d["classifier"] = f.classifier();
        return d;
      },
      py::arg("preset") = "samosa-1k");

  py::class_<models::HarModel>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return models::HarModel::load(p); })
      .def_static("from_archive", [](const WeightArchive& a) { return models::HarModel::load(a); })
      .def_property_readonly("class_names", [](const models::HarModel& h) { return h.config().class_names; })
      .def_property_readonly("preset", [](const models::HarModel& h) { return h.config().frontend.preset; })
      .def("detect", [](const models::HarModel& h, const FloatArray& w) { return h.detect(to_tensor(w)); },
           py::arg("window"))
      .def(
          "classify",
          [](const models::HarModel& h, const FloatArray& imu, const FloatArray& audio) {
            const auto c = h.classify(to_tensor(imu), to_tensor(audio));
            return py::make_tuple(to_array(c.logits), c.predicted);
          },
          py::arg("imu"), py::arg("audio"));

  m.def(
      "run_session",
      [](const models::HarModel& model, const std::filesystem::path& imu, const std::filesystem::path& wav,
         const std::filesystem::path& labels, double theta_on, double theta_off) {
        auto pc = stream::PipelineConfig::for_model(model.config());
        pc.theta_on = theta_on;
        pc.theta_off = theta_off;
        const auto session = load_session(imu, wav, labels, pc.audio_rate, model.config().class_names);
        stream::ModelBackend backend(model);
        const auto r = [&] {
          py::gil_scoped_release release;
          return stream::run_session(session, backend, pc);
        }();
        py::list out;
        for (const auto& e : r.events) out.append(event_dict(e));
        return out;
      },
      py::arg("model"), py::arg("imu"), py::arg("wav"), py::arg("labels"), py::arg("theta_on") = 0.5,
      py::arg("theta_off") = 0.5);

  m.def(
      "binary_f1",
      [](const std::vector<bool>& pred, const std::vector<bool>& truth) { return metrics::binary_f1(pred, truth); },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "weighted_f1",
      [](const std::vector<int>& pred, const std::vector<int>& truth) { return metrics::weighted_f1(pred, truth); },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "context_accuracy",
      [](const std::vector<int>& pred, const std::vector<int>& truth, const std::vector<std::string>& contexts) {
        const auto r = metrics::context_accuracy(pred, truth, contexts);
        return py::make_tuple(r.per_context, r.mean, r.pooled);
      },
      py::arg("pred"), py::arg("truth"), py::arg("contexts"));

  m.def(
      "write_fixtures",
      [](const std::filesystem::path& dir, std::uint64_t seed, const std::string& preset_name) {
        std::vector<std::string> names;
        for (const auto& f : fixtures::write_fixtures(dir, seed, preset(preset_name))) names.push_back(f.name);
        return names;
      },
      py::arg("dir"), py::arg("seed") = 42, py::arg("preset") = "samosa-1k");
}
