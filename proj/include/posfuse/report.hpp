#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posfuse/dataset.hpp"
#include "posfuse/metrics.hpp"
#include "posfuse/training.hpp"

namespace posfuse {

struct Provenance {
  std::string toolkit_version{kVersion};
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::uint32_t passes = 30;
  double lambda = 0.01;
  double alert_limit = 1.0;
};

struct MethodReport {
  FusionMethod method = FusionMethod::InverseVariance;
  ErrorSummary errors;
  SparsificationCurves curves;
  std::optional<ThresholdFit> threshold;
  std::optional<double> integrity_risk;
};

struct AnchorReport {
  std::uint32_t anchor_id = 0;
  ErrorSummary errors;
};

struct MetricsReport {
  std::string scenario;
  TrainMode mode = TrainMode::Mtl;
  LossMode loss = LossMode::Nll;
  std::uint32_t n_train = 0;
  std::uint32_t n_test = 0;
  std::vector<MethodReport> methods;
  std::vector<AnchorReport> per_anchor;  // late modes only
  Provenance provenance;

  std::string to_json() const;  // deterministic (ordered keys)
  const MethodReport* find_method(FusionMethod m) const;
};

struct EvalOptions {
  std::vector<FusionMethod> methods{FusionMethod::Average, FusionMethod::InverseVariance,
                                    FusionMethod::SpuriousRobust};
  std::uint32_t passes = 30;
  double lambda = 0.01;
  double alert_limit = 1.0;
  std::uint64_t eval_seed = 0;
  bool want_integrity_risk = true;
};

/// Per-sample estimates for every test index of a dataset, flattened to
/// error records per fusion method plus per-anchor records.
struct EvalRecords {
  std::vector<std::vector<ErrorRecord>> per_method;        // parallel to options.methods
  std::vector<std::vector<ErrorRecord>> per_anchor;        // late modes
  std::vector<std::uint32_t> anchor_ids;
};

EvalRecords collect_records(const ModelBundle& bundle, const Dataset& dataset,
                            const EvalOptions& options);

/// Fusion rows applicable to a training mode: late modes use the requested
/// fusion list, early fusion has the single un-fused row.
std::vector<FusionMethod> applicable_fusions(TrainMode mode,
                                             const std::vector<FusionMethod>& requested);

/// Assembles a report from precomputed records. static_records (same
/// method layout) supplies the threshold fits; pass nullptr to skip IR.
MetricsReport build_report(const ModelBundle& bundle, const Dataset& target,
                           const EvalRecords& target_records, const EvalRecords* static_records,
                           const EvalOptions& options, const std::string& scenario_name);

/// Full evaluation. Thresholds for the integrity risk are fitted on the
/// static reference (the target itself when it is static); requesting IR on
/// a dynamic dataset without a static reference is an error.
MetricsReport evaluate_bundle(const ModelBundle& bundle, const Dataset& target,
                              const Dataset* static_reference, const EvalOptions& options,
                              const std::string& scenario_name);

}  // namespace posfuse
