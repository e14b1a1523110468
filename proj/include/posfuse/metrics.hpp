#pragma once

#include <span>
#include <string>
#include <vector>

#include "posfuse/common.hpp"

namespace posfuse {

/// One test sample: Euclidean position error and the Euclidean norm of the
/// per-coordinate combined standard deviations.
struct ErrorRecord {
  double error = 0.0;       // meters
  double sigma_norm = 0.0;  // meters, sqrt(var_x + var_y)
};

struct ErrorSummary {
  double mean_error = 0.0;
  double p50 = 0.0, p90 = 0.0, p95 = 0.0, p99 = 0.0;
};

/// Mean Euclidean error plus nearest-rank percentiles of the error CDF.
/// Throws DomainError on empty input.
ErrorSummary mean_error(std::span<const ErrorRecord> records);

/// Residual curves follow the published form: raw (unsquared) Euclidean
/// errors averaged under a square root. square_errors switches to the RMSE
/// reading.
struct CurveOptions {
  bool square_errors = false;
};

/// Oracle curve O_N for N in [1, N_test - 1]: errors sorted descending,
/// O_N = sqrt(mean of the last N_test - N entries).
std::vector<double> oracle_curve(std::span<const ErrorRecord> records,
                                 const CurveOptions& opt = {});

/// Sparsification curve S_N: same removal but ordered by descending
/// uncertainty, ties broken by original index.
std::vector<double> sparsification_curve(std::span<const ErrorRecord> records,
                                         const CurveOptions& opt = {});

struct SparsificationCurves {
  std::vector<double> oracle;
  std::vector<double> sparsification;
  double ause = 0.0;
};

SparsificationCurves sparsification_curves(std::span<const ErrorRecord> records,
                                           const CurveOptions& opt = {});

/// Mean of S_N - O_N over N in [1, N_test - 1].
double ause(std::span<const ErrorRecord> records, const CurveOptions& opt = {});

struct ThresholdFit {
  double gamma = 0.0;      // sigma norm where P(error > AL) = 0.5
  double slope = 0.0;      // logistic weight on the sigma norm
  double intercept = 0.0;
  bool converged = false;
  bool reliable = false;   // false when the fit carries no signal
};

/// 1-D logistic regression of (error > alert_limit) on the sigma norm,
/// fitted by damped Newton iterations (cap 50, tol 1e-10) with a bisection
/// fallback on the empirical exceedance curve. Throws DataError when only
/// one class is present.
ThresholdFit fit_threshold(std::span<const ErrorRecord> records, double alert_limit);

struct IRConfig {
  double alert_limit = 1.0;  // meters
  double gamma = 1.0;        // warning threshold on the sigma norm
};

/// Fraction of samples whose error exceeds the alert limit while the
/// uncertainty stayed at or below gamma (no warning fired).
double integrity_risk(std::span<const ErrorRecord> records, const IRConfig& cfg);

/// CSV with one row per N: N, O_N, S_N, S_N - O_N.
std::string curves_to_csv(const SparsificationCurves& curves);

}  // namespace posfuse
