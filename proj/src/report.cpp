#include "posfuse/report.hpp"

#include <cmath>

#include "json.hpp"

namespace posfuse {

namespace {
using Json = nlohmann::ordered_json;

double sigma_norm_of(double var_x, double var_y) { return std::sqrt(var_x + var_y); }

Json summary_to_json(const ErrorSummary& s) {
  Json j;
  j["mean_error"] = s.mean_error;
  j["p50"] = s.p50;
  j["p90"] = s.p90;
  j["p95"] = s.p95;
  j["p99"] = s.p99;
  return j;
}

}  // namespace

std::vector<FusionMethod> applicable_fusions(TrainMode mode,
                                             const std::vector<FusionMethod>& requested) {
  if (mode == TrainMode::Early) return {FusionMethod::Single};
  std::vector<FusionMethod> out;
  for (auto m : requested)
    if (m != FusionMethod::Single) out.push_back(m);
  return out;
}

EvalRecords collect_records(const ModelBundle& bundle, const Dataset& dataset,
                            const EvalOptions& options) {
  if (dataset.test_idx.empty()) throw DataError("dataset has no test split to evaluate");
  const auto methods = applicable_fusions(bundle.mode, options.methods);
  if (methods.empty()) throw ConfigError("no fusion methods requested");

  EvalRecords rec;
  rec.per_method.resize(methods.size());
  const bool late = bundle.mode != TrainMode::Early;
  if (late) {
    rec.per_anchor.resize(bundle.n_anchors);
    for (const auto& h : bundle.heads) rec.anchor_ids.push_back(h.anchor_id);
  }
  const SPConfig sp_cfg{options.lambda};

  for (auto idx : dataset.test_idx) {
    const Sample& sample = dataset.samples[idx];
    auto rng = RngStream::keyed({options.eval_seed, static_cast<std::uint64_t>(StreamKind::Eval),
                                 idx});
    std::vector<UncertainEstimate> estimates = predict_all(bundle, sample, options.passes, rng);

    if (late)
      for (std::size_t a = 0; a < estimates.size(); ++a)
        rec.per_anchor[a].push_back(ErrorRecord{
            std::hypot(estimates[a].x - sample.position.x, estimates[a].y - sample.position.y),
            sigma_norm_of(estimates[a].var_x, estimates[a].var_y)});

    for (std::size_t m = 0; m < methods.size(); ++m) {
      FusedEstimate fused;
      switch (methods[m]) {
        case FusionMethod::Average: fused = fuse_average(estimates); break;
        case FusionMethod::InverseVariance: fused = fuse_ivw(estimates); break;
        case FusionMethod::SpuriousRobust: fused = fuse_sp(estimates, sp_cfg); break;
        case FusionMethod::Single:
          fused = FusedEstimate{estimates[0].x, estimates[0].y, estimates[0].var_x,
                                estimates[0].var_y, FusionMethod::Single};
          break;
      }
      rec.per_method[m].push_back(ErrorRecord{
          std::hypot(fused.x - sample.position.x, fused.y - sample.position.y),
          sigma_norm_of(fused.var_x, fused.var_y)});
    }
  }
  return rec;
}

MetricsReport evaluate_bundle(const ModelBundle& bundle, const Dataset& target,
                              const Dataset* static_reference, const EvalOptions& options,
                              const std::string& scenario_name) {
  EvalRecords target_records = collect_records(bundle, target, options);

  bool target_is_static = true;
  for (auto idx : target.test_idx) target_is_static &= target.samples[idx].scenario_tag == 0;

  const EvalRecords* static_records = nullptr;
  EvalRecords static_records_store;
  if (options.want_integrity_risk) {
    if (static_reference != nullptr) {
      static_records_store = collect_records(bundle, *static_reference, options);
      static_records = &static_records_store;
    } else if (target_is_static) {
      static_records = &target_records;
    } else {
      throw ConfigError("integrity risk on a dynamic dataset needs a static reference dataset");
    }
  }
  return build_report(bundle, target, target_records, static_records, options, scenario_name);
}

MetricsReport build_report(const ModelBundle& bundle, const Dataset& target,
                           const EvalRecords& target_records, const EvalRecords* static_records,
                           const EvalOptions& options, const std::string& scenario_name) {
  const auto methods = applicable_fusions(bundle.mode, options.methods);
  MetricsReport report;
  report.scenario = scenario_name;
  report.mode = bundle.mode;
  report.loss = bundle.loss;
  report.n_train = static_cast<std::uint32_t>(target.train_idx.size());
  report.n_test = static_cast<std::uint32_t>(target.test_idx.size());
  report.provenance.seed = options.eval_seed;
  report.provenance.passes = options.passes;
  report.provenance.lambda = options.lambda;
  report.provenance.alert_limit = options.alert_limit;
  report.provenance.dataset_hash = hex64(target.content_hash());

  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodReport mr;
    mr.method = methods[m];
    mr.errors = mean_error(target_records.per_method[m]);
    mr.curves = sparsification_curves(target_records.per_method[m]);
    if (static_records != nullptr) {
      try {
        ThresholdFit fit = fit_threshold(static_records->per_method[m], options.alert_limit);
        mr.threshold = fit;
        mr.integrity_risk = integrity_risk(target_records.per_method[m],
                                           IRConfig{options.alert_limit, fit.gamma});
      } catch (const DataError&) {
        // single-class static errors: no threshold, IR unavailable
      }
    }
    report.methods.push_back(std::move(mr));
  }

  for (std::size_t a = 0; a < target_records.per_anchor.size(); ++a)
    report.per_anchor.push_back(AnchorReport{target_records.anchor_ids[a],
                                             mean_error(target_records.per_anchor[a])});
  return report;
}

const MethodReport* MetricsReport::find_method(FusionMethod m) const {
  for (const auto& mr : methods)
    if (mr.method == m) return &mr;
  return nullptr;
}

std::string MetricsReport::to_json() const {
  Json j;
  j["scenario"] = scenario;
  j["mode"] = train_mode_name(mode);
  j["loss"] = loss_mode_name(loss);
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["methods"] = Json::array();
  for (const auto& mr : methods) {
    Json jm;
    jm["method"] = fusion_method_name(mr.method);
    jm["errors"] = summary_to_json(mr.errors);
    jm["ause"] = mr.curves.ause;
    if (mr.threshold) {
      Json jt;
      jt["gamma"] = mr.threshold->gamma;
      jt["slope"] = mr.threshold->slope;
      jt["intercept"] = mr.threshold->intercept;
      jt["converged"] = mr.threshold->converged;
      jt["reliable"] = mr.threshold->reliable;
      jm["threshold"] = jt;
    } else {
      jm["threshold"] = nullptr;
    }
    jm["integrity_risk"] = mr.integrity_risk ? Json(*mr.integrity_risk) : Json(nullptr);
    j["methods"].push_back(jm);
  }
  j["per_anchor"] = Json::array();
  for (const auto& ar : per_anchor) {
    Json ja;
    ja["anchor_id"] = ar.anchor_id;
    ja["errors"] = summary_to_json(ar.errors);
    j["per_anchor"].push_back(ja);
  }
  Json jp;
  jp["toolkit_version"] = provenance.toolkit_version;
  jp["config_hash"] = provenance.config_hash;
  jp["dataset_hash"] = provenance.dataset_hash;
  jp["seed"] = provenance.seed;
  jp["passes"] = provenance.passes;
  jp["lambda"] = provenance.lambda;
  jp["alert_limit"] = provenance.alert_limit;
  j["provenance"] = jp;
  return j.dump(2);
}

}  // namespace posfuse
