#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "ecgtrust/balance.hpp"
#include "ecgtrust/denoise.hpp"
#include "ecgtrust/filters.hpp"
#include "ecgtrust/fusion.hpp"
#include "ecgtrust/pipeline.hpp"
#include "ecgtrust/signals.hpp"
#include "ecgtrust/stats.hpp"
#include "ecgtrust/transforms.hpp"
#include "ecgtrust/trust.hpp"

namespace py = pybind11;
namespace pl = ecgtrust::pipeline;
using ecgtrust::Mask;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Mask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D mask");
  Mask m(static_cast<std::size_t>(a.size()));
  for (py::ssize_t i = 0; i < a.size(); ++i) m[static_cast<std::size_t>(i)] = a.data()[i] ? 1 : 0;
  return m;
}

pl::RunConfig resolve(const std::string& config_json, std::optional<std::uint64_t> seed,
                      std::optional<std::string> out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(config_json);
  } catch (const nlohmann::json::exception& e) {
    throw pl::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  pl::RunConfig c = pl::config_from_json(j);
  if (seed) c.seed = *seed;
  if (out) c.output_dir = *out;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ecgtrust native core";

  py::register_exception<pl::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<pl::MissingPrerequisite>(m, "MissingPrerequisite", PyExc_RuntimeError);
  py::register_exception<pl::NumericalFailure>(m, "NumericalFailure", PyExc_ArithmeticError);

  // Signals and transforms.
  m.def(
      "synth_ecg",
      [](int label, double fs, int n_beats, std::uint64_t seed) {
        if (label < 0 || label >= ecgtrust::kNumClasses) throw std::invalid_argument("label must be 0..3");
        const auto r = ecgtrust::signals::synth_ecg(static_cast<ecgtrust::EcgClass>(label), fs, n_beats, seed);
        py::array_t<bool> mask(static_cast<py::ssize_t>(r.stt_mask.size()));
        for (std::size_t i = 0; i < r.stt_mask.size(); ++i) mask.mutable_data()[i] = r.stt_mask[i] != 0;
        py::dict d;
        d["samples"] = to_array(r.samples);
        d["stt_mask"] = mask;
        d["label"] = label;
        d["fs"] = r.fs;
        return d;
      },
      py::arg("label"), py::arg("fs") = 250.0, py::arg("n_beats") = 6, py::arg("seed") = 0);
  m.def(
      "bandpass",
      [](const Array& x, double fs, double lo, double hi, int order) {
        const auto v = to_vector(x);
        return to_array(ecgtrust::signals::bandpass(v, fs, {lo, hi, order, true}));
      },
      py::arg("signal"), py::arg("fs") = 250.0, py::arg("lo_hz") = 0.5, py::arg("hi_hz") = 45.0,
      py::arg("order") = 4);
  m.def(
      "soft_threshold",
      [](const Array& x, double lambda) { return to_array(ecgtrust::signals::soft_threshold(to_vector(x), lambda)); },
      py::arg("detail"), py::arg("threshold"));
  m.def(
      "dwt_denoise",
      [](const Array& x, int levels, double threshold) {
        return to_array(ecgtrust::signals::dwt_denoise(to_vector(x), {levels, threshold}));
      },
      py::arg("signal"), py::arg("levels") = 4, py::arg("threshold") = 0.08);
  m.def(
      "fft_features",
      [](const Array& x, std::size_t n_bins) { return to_array(ecgtrust::transforms::fft_features(to_vector(x), n_bins)); },
      py::arg("signal"), py::arg("n_bins") = 128);

  // Statistics and alignment metrics.
  m.def(
      "cohens_d", [](const Array& a, const Array& b) { return ecgtrust::trust::cohens_d(to_vector(a), to_vector(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "kl_divergence",
      [](const Array& p, const Array& q, std::size_t n_bins) {
        return ecgtrust::balance::kl_divergence(to_vector(p), to_vector(q), n_bins);
      },
      py::arg("p_samples"), py::arg("q_samples"), py::arg("n_bins") = 10);
  m.def("discrete_mi", &ecgtrust::trust::discrete_mi, py::arg("joint"),
        "Mutual information in nats of a joint probability table.");
  m.def("simplex_lattice", &ecgtrust::fusion::simplex_lattice, py::arg("n_branches"), py::arg("step") = 0.05);
  m.def(
      "windowed_nmi",
      [](const Array& s, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask, std::size_t window) {
        return ecgtrust::trust::windowed_nmi(to_vector(s), to_mask(mask), window).value;
      },
      py::arg("saliency"), py::arg("mask"), py::arg("window") = 50);
  m.def(
      "dice_iou_at_k",
      [](const Array& s, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask, double k) {
        const auto o = ecgtrust::trust::dice_iou_at_k(to_vector(s), to_mask(mask), k);
        return py::make_tuple(o.dice, o.iou);
      },
      py::arg("saliency"), py::arg("mask"), py::arg("k_percent") = 10.0);

  // Configuration and pipeline stages. Configs cross the boundary as JSON text.
  m.def("default_config_json", [] { return pl::config_to_json(pl::RunConfig{}).dump(); });
  m.def(
      "normalize_config_json", [](const std::string& text) { return pl::config_to_json(resolve(text, {}, {})).dump(); },
      py::arg("config_json"));
  m.def("stage_order", &pl::stage_order);
  m.def(
      "gen",
      [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
        const auto c = resolve(config, seed, out);
        py::gil_scoped_release release;
        pl::cmd_gen(c);
        return c.output_dir;
      },
      py::arg("config_json") = "{}", py::arg("seed") = py::none(), py::arg("out") = py::none());
  m.def(
      "run",
      [](const std::vector<std::string>& stages, const std::string& config, std::optional<std::uint64_t> seed,
         std::optional<std::string> out) {
        const auto c = resolve(config, seed, out);
        py::gil_scoped_release release;
        pl::cmd_pipeline(c, stages);
        return c.output_dir;
      },
      py::arg("stages"), py::arg("config_json") = "{}", py::arg("seed") = py::none(), py::arg("out") = py::none());
  m.def(
      "report",
      [](const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
        const auto c = resolve(config, seed, out);
        py::gil_scoped_release release;
        pl::cmd_report(c);
        return c.output_dir;
      },
      py::arg("config_json") = "{}", py::arg("seed") = py::none(), py::arg("out") = py::none());
}
