/* Copyright 2026 The htsr-decay Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "htsr/config.hpp"
#include "htsr/error.hpp"
#include "htsr/optimizer.hpp"
#include "htsr/run_artifacts.hpp"
#include "htsr/schedule.hpp"
#include "htsr/spectral.hpp"
#include "htsr/tensor_io.hpp"
#include "htsr/train.hpp"

namespace py = pybind11;
using namespace htsr;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FitMethod fit_from(const std::string& name) {
  auto m = parse_fit_method(name);
  if (!m) throw py::value_error("unknown fit method '" + name + "'");
  return *m;
}

MetricMap metrics_from(const std::map<std::string, double>& in) {
  MetricMap out;
  for (const auto& [name, v] : in) out[parse_module_name(name)] = v;
  return out;
}

std::map<std::string, double> decays_of(const DecayPlan& plan) {
  std::map<std::string, double> out;
  for (const auto& [id, d] : plan.assignments) out[id.raw_name] = d;
  return out;
}

py::dict hill_dict(const HillFit& f) {
  py::dict d;
  d["alpha"] = f.alpha;
  d["k"] = f.k;
  d["xmin"] = f.xmin;
  d["method"] = std::string(fit_method_name(f.method));
  return d;
}

py::dict report_dict(const SpectralReport& r) {
  py::dict d = hill_dict(r.alpha);
  d["module"] = r.module.raw_name;
  d["layer"] = r.module.layer_index;
  d["kind"] = std::string(kind_name(r.module.kind));
  d["spectral_norm"] = r.spectral_norm;
  d["frobenius_norm"] = r.frobenius_norm;
  d["grad_norm"] = r.grad_norm ? py::cast(*r.grad_norm) : py::none();
  return d;
}

std::vector<double> esd_of(const RowMajorMatrix& w) { return compute_esd(w).eigenvalues; }

void write_ckpt(const std::filesystem::path& path, const std::map<std::string, FloatArray>& tensors,
                const Metadata& metadata) {
  std::vector<WeightMatrix> entries;
  for (const auto& [name, arr] : tensors) {
    if (arr.ndim() != 2) throw py::value_error("'" + name + "' must be 2-D");
    WeightMatrix w{parse_module_name(name), static_cast<std::size_t>(arr.shape(0)),
                   static_cast<std::size_t>(arr.shape(1)), {}};
    w.values.assign(arr.data(), arr.data() + arr.size());
    entries.push_back(std::move(w));
  }
  write_checkpoint(entries, metadata, path);
}

py::tuple read_ckpt(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  py::dict tensors;
  for (const auto& w : ckpt.entries) {
    FloatArray arr({w.rows, w.cols});
    std::memcpy(arr.mutable_data(), w.values.data(), w.values.size() * sizeof(float));
    tensors[py::str(w.id.raw_name)] = arr;
  }
  return py::make_tuple(tensors, ckpt.metadata);
}

py::dict train_from_json(const std::string& config_text, const std::string& base_dir) {
  const ExperimentConfig cfg =
      parse_experiment_config(nlohmann::json::parse(config_text), base_dir);
  const Corpus corpus = load_corpus(cfg.corpus);
  RunLog log;
  {
    py::gil_scoped_release release;
    log = train_run(cfg.model, cfg.train, corpus).log;
  }
  py::list losses, lrs, grad_norms, recomputes;
  for (const auto& s : log.steps) {
    losses.append(s.loss);
    lrs.append(s.lr);
    grad_norms.append(s.grad_norm);
  }
  for (const auto& r : log.recomputes) {
    py::dict rec;
    rec["step"] = r.step;
    rec["decay"] = decays_of(r.plan);
    py::list reports;
    for (const auto& rep : r.reports) reports.append(report_dict(rep));
    rec["reports"] = reports;
    recomputes.append(rec);
  }
  py::dict out;
  out["loss"] = losses;
  out["lr"] = lrs;
  out["grad_norm"] = grad_norms;
  out["recomputes"] = recomputes;
  out["final_val_loss"] = log.final_val_loss;
  out["perplexity"] = log.perplexity;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Heavy-tailed spectral analysis and module-wise weight decay";

  auto base = py::register_exception<Error>(m, "HtsrError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<SpectralError>(m, "SpectralError", base.ptr());
  py::register_exception<ScheduleError>(m, "ScheduleError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("parse_module_name", [](const std::string& name) {
    const ModuleId id = parse_module_name(name);
    return py::make_tuple(id.layer_index, std::string(kind_name(id.kind)));
  });

  m.def("compute_esd", &esd_of, py::arg("weight"),
        "Squared singular values of a 2-D array, ascending.");
  m.def(
      "hill_alpha",
      [](std::vector<double> eigenvalues, std::size_t k) {
        return hill_dict(hill_alpha(make_esd(std::move(eigenvalues)), k));
      },
      py::arg("eigenvalues"), py::arg("k"));
  m.def(
      "fit_power_law",
      [](std::vector<double> eigenvalues, const std::string& method) {
        return hill_dict(fit_power_law(make_esd(std::move(eigenvalues)), fit_from(method)));
      },
      py::arg("eigenvalues"), py::arg("method") = "median");
  m.def(
      "analyze_module",
      [](const std::string& name, const RowMajorMatrix& weight,
         std::optional<RowMajorMatrix> grad, const std::string& method) {
        return report_dict(analyze_module(parse_module_name(name), weight,
                                          grad ? &*grad : nullptr, fit_from(method)));
      },
      py::arg("name"), py::arg("weight"), py::arg("grad") = py::none(),
      py::arg("method") = "median");
  m.def("spectral_norm", [](const RowMajorMatrix& w) { return spectral_norm(w); });
  m.def("frobenius_norm", [](const RowMajorMatrix& w) { return frobenius_norm(w); });

  m.def(
      "assign_linear",
      [](const std::map<std::string, double>& metrics, double eta, double s1, double s2) {
        return decays_of(assign_linear(metrics_from(metrics), eta, s1, s2));
      },
      py::arg("metrics"), py::arg("eta"), py::arg("s1") = 0.67, py::arg("s2") = 5.0);
  m.def(
      "assign_sqrt",
      [](const std::map<std::string, double>& metrics, double eta) {
        return decays_of(assign_sqrt(metrics_from(metrics), eta));
      },
      py::arg("metrics"), py::arg("eta"));
  m.def(
      "assign_log2",
      [](const std::map<std::string, double>& metrics, double eta) {
        return decays_of(assign_log2(metrics_from(metrics), eta));
      },
      py::arg("metrics"), py::arg("eta"));
  m.def(
      "assign_sigmoid_like",
      [](const std::map<std::string, double>& grad_norms, double eta, double beta) {
        return decays_of(assign_sigmoid_like(metrics_from(grad_norms), eta, beta));
      },
      py::arg("grad_norms"), py::arg("eta"), py::arg("beta") = 4.0);

  m.def("lr_at", &lr_at, py::arg("t"), py::arg("total"), py::arg("warmup_fraction"),
        py::arg("lr_peak"), py::arg("floor_ratio") = 0.1);

  m.def("write_checkpoint", &write_ckpt, py::arg("path"), py::arg("tensors"),
        py::arg("metadata") = Metadata{});
  m.def("read_checkpoint", &read_ckpt, py::arg("path"),
        "Returns ({name: float32 array}, metadata).");

  m.def("_train_json", &train_from_json, py::arg("config"), py::arg("base_dir"));
}
