#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "posfuse/report.hpp"

namespace posfuse {

/// Cross-product experiment description for the matrix driver.
struct ExperimentSpec {
  std::string env_path;
  std::vector<std::string> scenarios{"static"};
  std::vector<TrainMode> modes{TrainMode::Early, TrainMode::Stl, TrainMode::Mtl};
  std::vector<LossMode> losses{LossMode::Mse, LossMode::Nll};
  std::vector<FusionMethod> fusions{FusionMethod::Average, FusionMethod::InverseVariance,
                                    FusionMethod::SpuriousRobust};
  std::vector<std::uint32_t> train_sizes{1000, 2000, 5000};
  std::uint32_t n_test = 2000;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir;
  TrainConfig train_template;  // mode/loss/seed overridden per cell
  std::uint32_t passes = 30;
  double lambda = 0.01;
  double alert_limit = 1.0;
  double atten_db = 20.0;
  std::uint32_t window = 3;

  void validate(const Environment& env) const;
  std::string to_json() const;
  static ExperimentSpec from_json(const std::string& text);
  static ExperimentSpec load(const std::string& path);
};

struct MatrixResult {
  std::size_t cells_total = 0;
  std::size_t cells_skipped = 0;
  std::size_t cells_failed = 0;
};

/// Runs the full cross-product, one report JSON + curves CSV per
/// (mode, loss, fusion, scenario, size, seed) cell under out_dir/cells,
/// then assembles out_dir/summary.csv. Completed cells (matching
/// config/dataset hashes) are skipped; per-cell failures are recorded
/// without aborting the matrix. POSFUSE_THREADS >= 2 runs training groups
/// concurrently; 0 (default) is the sequential deterministic mode.
MatrixResult run_matrix(const ExperimentSpec& spec, std::ostream& log);

/// Thread budget from POSFUSE_THREADS (0 = sequential).
unsigned thread_budget();

}  // namespace posfuse
