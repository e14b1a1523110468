#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "posfuse/experiment.hpp"

namespace py = pybind11;
using namespace posfuse;

namespace {

std::vector<UncertainEstimate> estimates_from(const std::vector<py::dict>& dicts) {
  std::vector<UncertainEstimate> out;
  out.reserve(dicts.size());
  for (const auto& d : dicts) {
    UncertainEstimate e;
    if (d.contains("anchor_id")) e.anchor_id = d["anchor_id"].cast<std::uint32_t>();
    e.x = d["x"].cast<double>();
    e.y = d["y"].cast<double>();
    e.var_x = d["var_x"].cast<double>();
    e.var_y = d["var_y"].cast<double>();
    out.push_back(e);
  }
  return out;
}

py::dict fused_to_dict(const FusedEstimate& f) {
  py::dict d;
  d["x"] = f.x;
  d["y"] = f.y;
  d["var_x"] = f.var_x;
  d["var_y"] = f.var_y;
  d["method"] = fusion_method_name(f.method);
  return d;
}

std::vector<ErrorRecord> records_from(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<ErrorRecord> out;
  out.reserve(pairs.size());
  for (const auto& [e, s] : pairs) out.push_back(ErrorRecord{e, s});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-anchor CSI-fingerprint positioning with uncertainty-based fusion";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<ConfigError>(m, "PosfuseConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "PosfuseDataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "PosfuseNumericError", PyExc_ArithmeticError);

  py::class_<Environment>(m, "Environment")
      .def_static("desk_default", &make_desk_environment, py::arg("seed") = 1)
      .def_static("from_json", &Environment::from_json)
      .def_static("load", &Environment::load)
      .def("to_json", &Environment::to_json)
      .def("save", &Environment::save)
      .def_property_readonly("n_anchors",
                             [](const Environment& e) { return e.anchors.size(); })
      .def_readwrite("seed", &Environment::seed)
      .def_readwrite("n_subcarriers", &Environment::n_subcarriers);

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &Dataset::load)
      .def("save", &Dataset::save)
      .def_property_readonly("n_anchors", [](const Dataset& d) { return d.n_anchors; })
      .def_property_readonly("n_samples", [](const Dataset& d) { return d.samples.size(); })
      .def_property_readonly("n_train", [](const Dataset& d) { return d.train_idx.size(); })
      .def_property_readonly("n_val", [](const Dataset& d) { return d.val_idx.size(); })
      .def_property_readonly("n_test", [](const Dataset& d) { return d.test_idx.size(); })
      .def("content_hash", [](const Dataset& d) { return hex64(d.content_hash()); })
      .def("position", [](const Dataset& d, std::size_t i) {
        const auto& p = d.samples.at(i).position;
        return std::make_pair(p.x, p.y);
      });

  m.def(
      "gen_dataset",
      [](const Environment& env, std::uint32_t n_train, std::uint32_t n_val, std::uint32_t n_test,
         const std::string& scenario) {
        return gen_dataset(env, SplitSpec::counts(n_train, n_val, n_test),
                           ScenarioSpec::parse(scenario, env));
      },
      py::arg("env"), py::arg("n_train"), py::arg("n_val"), py::arg("n_test"),
      py::arg("scenario") = "static");

  py::class_<ModelBundle>(m, "ModelBundle")
      .def_static("load", &ModelBundle::load)
      .def("save", &ModelBundle::save, py::arg("path"), py::arg("include_optimizer_state") = false)
      .def_property_readonly("mode",
                             [](const ModelBundle& b) { return train_mode_name(b.mode); })
      .def_property_readonly("loss", [](const ModelBundle& b) { return loss_mode_name(b.loss); })
      .def_property_readonly("parameter_count", &ModelBundle::parameter_count)
      .def_property_readonly("best_validation_loss", &ModelBundle::best_validation_loss);

  m.def(
      "train",
      [](const Dataset& ds, const std::string& config_json) {
        return train(ds, TrainConfig::from_json(config_json));
      },
      py::arg("dataset"), py::arg("config_json") = "{}",
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "predict",
      [](const ModelBundle& bundle, const Dataset& ds, std::size_t sample_index,
         std::uint32_t passes, std::uint64_t seed) {
        auto rng = RngStream::keyed({seed, static_cast<std::uint64_t>(StreamKind::Eval),
                                     static_cast<std::uint64_t>(sample_index)});
        auto estimates = predict_all(bundle, ds.samples.at(sample_index), passes, rng);
        std::vector<py::dict> out;
        for (const auto& e : estimates) {
          py::dict d;
          d["anchor_id"] = e.anchor_id;
          d["x"] = e.x;
          d["y"] = e.y;
          d["var_x"] = e.var_x;
          d["var_y"] = e.var_y;
          out.push_back(d);
        }
        return out;
      },
      py::arg("bundle"), py::arg("dataset"), py::arg("sample_index"), py::arg("passes") = 30,
      py::arg("seed") = 0);

  m.def("fuse_average", [](const std::vector<py::dict>& est) {
    auto v = estimates_from(est);
    return fused_to_dict(fuse_average(v));
  });
  m.def("fuse_ivw", [](const std::vector<py::dict>& est) {
    auto v = estimates_from(est);
    return fused_to_dict(fuse_ivw(v));
  });
  m.def(
      "fuse_sp",
      [](const std::vector<py::dict>& est, double lambda) {
        auto v = estimates_from(est);
        return fused_to_dict(fuse_sp(v, SPConfig{lambda}));
      },
      py::arg("estimates"), py::arg("lambda_") = 0.01);
  m.def(
      "sp_adjust",
      [](const std::vector<py::dict>& est, double lambda) {
        auto v = estimates_from(est);
        auto adjusted = sp_adjust(v, SPConfig{lambda});
        std::vector<std::pair<double, double>> vars;
        for (const auto& e : adjusted) vars.emplace_back(e.var_x, e.var_y);
        return vars;
      },
      py::arg("estimates"), py::arg("lambda_") = 0.01);

  m.def("mean_error", [](const std::vector<std::pair<double, double>>& recs) {
    auto v = records_from(recs);
    ErrorSummary s = mean_error(v);
    py::dict d;
    d["mean_error"] = s.mean_error;
    d["p50"] = s.p50;
    d["p90"] = s.p90;
    d["p95"] = s.p95;
    d["p99"] = s.p99;
    return d;
  });
  m.def("oracle_curve", [](const std::vector<std::pair<double, double>>& recs) {
    return oracle_curve(records_from(recs));
  });
  m.def("sparsification_curve", [](const std::vector<std::pair<double, double>>& recs) {
    return sparsification_curve(records_from(recs));
  });
  m.def("ause", [](const std::vector<std::pair<double, double>>& recs) {
    return ause(records_from(recs));
  });
  m.def(
      "fit_threshold",
      [](const std::vector<std::pair<double, double>>& recs, double alert_limit) {
        ThresholdFit f = fit_threshold(records_from(recs), alert_limit);
        py::dict d;
        d["gamma"] = f.gamma;
        d["slope"] = f.slope;
        d["intercept"] = f.intercept;
        d["converged"] = f.converged;
        d["reliable"] = f.reliable;
        return d;
      },
      py::arg("records"), py::arg("alert_limit") = 1.0);
  m.def(
      "integrity_risk",
      [](const std::vector<std::pair<double, double>>& recs, double alert_limit, double gamma) {
        return integrity_risk(records_from(recs), IRConfig{alert_limit, gamma});
      },
      py::arg("records"), py::arg("alert_limit"), py::arg("gamma"));

  m.def(
      "evaluate",
      [](const ModelBundle& bundle, const Dataset& target, const Dataset* static_ref,
         std::uint32_t passes, double lambda, double alert_limit, std::uint64_t seed,
         bool want_ir) {
        EvalOptions opts;
        opts.passes = passes;
        opts.lambda = lambda;
        opts.alert_limit = alert_limit;
        opts.eval_seed = seed;
        opts.want_integrity_risk = want_ir;
        std::string scenario = "static";
        for (auto i : target.test_idx)
          if (target.samples[i].scenario_tag != 0) scenario = "dynamic";
        return evaluate_bundle(bundle, target, static_ref, opts, scenario).to_json();
      },
      py::arg("bundle"), py::arg("target"), py::arg("static_ref") = nullptr,
      py::arg("passes") = 30, py::arg("lambda_") = 0.01, py::arg("alert_limit") = 1.0,
      py::arg("seed") = 0, py::arg("want_ir") = true,
      py::call_guard<py::gil_scoped_release>());
}
