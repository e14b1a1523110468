#include "posfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace posfuse {

namespace {

double nearest_rank_percentile(const std::vector<double>& sorted, double pct) {
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(pct / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

// Residual curve after removing the first N entries of `ordered`, for
// N in [1, size - 1].
std::vector<double> removal_curve(const std::vector<double>& ordered, bool square_errors) {
  const std::size_t n = ordered.size();
  std::vector<double> curve(n - 1);
  double tail = 0.0;
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    tail += square_errors ? ordered[i] * ordered[i] : ordered[i];
    suffix[i] = tail;
  }
  for (std::size_t big_n = 1; big_n < n; ++big_n)
    curve[big_n - 1] = std::sqrt(suffix[big_n] / static_cast<double>(n - big_n));
  return curve;
}

std::vector<double> errors_sorted_descending(std::span<const ErrorRecord> records) {
  std::vector<double> errors(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) errors[i] = records[i].error;
  std::sort(errors.begin(), errors.end(), std::greater<>());
  return errors;
}

}  // namespace

ErrorSummary mean_error(std::span<const ErrorRecord> records) {
  if (records.empty()) throw DomainError("mean error of an empty record set");
  std::vector<double> errors(records.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    errors[i] = records[i].error;
    sum += records[i].error;
  }
  std::sort(errors.begin(), errors.end());
  ErrorSummary s;
  s.mean_error = sum / static_cast<double>(records.size());
  s.p50 = nearest_rank_percentile(errors, 50.0);
  s.p90 = nearest_rank_percentile(errors, 90.0);
  s.p95 = nearest_rank_percentile(errors, 95.0);
  s.p99 = nearest_rank_percentile(errors, 99.0);
  return s;
}

std::vector<double> oracle_curve(std::span<const ErrorRecord> records, const CurveOptions& opt) {
  if (records.size() < 2) throw DomainError("curves need at least two records");
  return removal_curve(errors_sorted_descending(records), opt.square_errors);
}

std::vector<double> sparsification_curve(std::span<const ErrorRecord> records,
                                         const CurveOptions& opt) {
  if (records.size() < 2) throw DomainError("curves need at least two records");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].sigma_norm > records[b].sigma_norm;
  });
  std::vector<double> errors(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) errors[i] = records[order[i]].error;
  return removal_curve(errors, opt.square_errors);
}

SparsificationCurves sparsification_curves(std::span<const ErrorRecord> records,
                                           const CurveOptions& opt) {
  SparsificationCurves c;
  c.oracle = oracle_curve(records, opt);
  c.sparsification = sparsification_curve(records, opt);
  double gap = 0.0;
  for (std::size_t i = 0; i < c.oracle.size(); ++i) gap += c.sparsification[i] - c.oracle[i];
  c.ause = gap / static_cast<double>(c.oracle.size());
  return c;
}

double ause(std::span<const ErrorRecord> records, const CurveOptions& opt) {
  return sparsification_curves(records, opt).ause;
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) {
    double e = std::exp(-std::min(z, 35.0));
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(std::max(z, -35.0));
  return e / (1.0 + e);
}

// Deterministic fallback when Newton fails: the split of the sigma-sorted
// records that minimizes misclassification of the exceedance labels, i.e.
// where the empirical error rate crosses one half. Ties resolve to the
// lowest split; the threshold is the midpoint of the splitting gap.
double empirical_crossing(std::span<const ErrorRecord> records, double alert_limit) {
  std::vector<std::pair<double, int>> pts;  // (sigma, label)
  pts.reserve(records.size());
  std::size_t total_pos = 0;
  for (const auto& r : records) {
    int y = r.error > alert_limit ? 1 : 0;
    total_pos += static_cast<std::size_t>(y);
    pts.emplace_back(r.sigma_norm, y);
  }
  std::sort(pts.begin(), pts.end());
  // Split before index i: records [0, i) predicted safe, [i, n) warned.
  std::size_t best_i = 0, best_cost = total_pos;
  std::size_t pos_below = 0;
  for (std::size_t i = 1; i <= pts.size(); ++i) {
    pos_below += static_cast<std::size_t>(pts[i - 1].second);
    std::size_t neg_above = (pts.size() - i) - (total_pos - pos_below);
    std::size_t cost = pos_below + neg_above;
    if (cost < best_cost) {
      best_cost = cost;
      best_i = i;
    }
  }
  if (best_i == 0) return pts.front().first;
  if (best_i == pts.size()) return pts.back().first;
  return 0.5 * (pts[best_i - 1].first + pts[best_i].first);
}

}  // namespace

ThresholdFit fit_threshold(std::span<const ErrorRecord> records, double alert_limit) {
  if (records.empty()) throw DomainError("cannot fit a threshold on empty records");
  std::size_t positives = 0;
  double sigma_lo = records[0].sigma_norm, sigma_hi = records[0].sigma_norm;
  for (const auto& r : records) {
    positives += r.error > alert_limit ? 1 : 0;
    sigma_lo = std::min(sigma_lo, r.sigma_norm);
    sigma_hi = std::max(sigma_hi, r.sigma_norm);
  }
  if (positives == 0 || positives == records.size())
    throw DataError("threshold fit needs errors on both sides of the alert limit; "
                    "widen the evaluation set");

  const double n = static_cast<double>(records.size());
  double w = 0.0;
  double rate = static_cast<double>(positives) / n;
  double b = std::log(rate / (1.0 - rate));
  const double ridge = 1e-9;
  bool converged = false;
  for (int iter = 0; iter < 50; ++iter) {
    double g_w = 0.0, g_b = 0.0, h_ww = ridge, h_wb = 0.0, h_bb = ridge;
    for (const auto& r : records) {
      double y = r.error > alert_limit ? 1.0 : 0.0;
      double p = sigmoid(w * r.sigma_norm + b);
      double d = p - y;
      double q = std::max(p * (1.0 - p), 1e-12);
      g_w += d * r.sigma_norm;
      g_b += d;
      h_ww += q * r.sigma_norm * r.sigma_norm;
      h_wb += q * r.sigma_norm;
      h_bb += q;
    }
    double det = h_ww * h_bb - h_wb * h_wb;
    if (!(std::abs(det) > 1e-300)) break;
    double step_w = (h_bb * g_w - h_wb * g_b) / det;
    double step_b = (h_ww * g_b - h_wb * g_w) / det;
    w -= step_w;
    b -= step_b;
    if (!std::isfinite(w) || !std::isfinite(b)) {
      converged = false;
      break;
    }
    if (std::abs(step_w) < 1e-10 && std::abs(step_b) < 1e-10) {
      converged = true;
      break;
    }
  }

  ThresholdFit fit;
  fit.converged = converged && std::isfinite(w) && std::isfinite(b);
  const double sigma_scale = std::max(sigma_hi - sigma_lo, 1e-12);
  if (!fit.converged || !std::isfinite(-b / w)) {
    fit.gamma = empirical_crossing(records, alert_limit);
    fit.slope = std::isfinite(w) ? w : 0.0;
    fit.intercept = std::isfinite(b) ? b : 0.0;
  } else {
    fit.slope = w;
    fit.intercept = b;
    fit.gamma = -b / w;
  }
  // A slope that moves the logit by less than ~0.1 across the observed
  // sigma range carries no usable signal.
  fit.reliable = std::isfinite(fit.slope) && fit.slope * sigma_scale > 0.1 &&
                 fit.gamma > sigma_lo - sigma_scale && fit.gamma < sigma_hi + sigma_scale;
  fit.gamma = std::clamp(fit.gamma, sigma_lo, sigma_hi);
  return fit;
}

double integrity_risk(std::span<const ErrorRecord> records, const IRConfig& cfg) {
  if (records.empty()) throw DomainError("integrity risk of an empty record set");
  std::size_t silent_overruns = 0;
  for (const auto& r : records)
    if (r.sigma_norm <= cfg.gamma && r.error > cfg.alert_limit) ++silent_overruns;
  return static_cast<double>(silent_overruns) / static_cast<double>(records.size());
}

std::string curves_to_csv(const SparsificationCurves& curves) {
  std::ostringstream out;
  out << "N,oracle,sparsification,gap\n";
  out.precision(12);
  for (std::size_t i = 0; i < curves.oracle.size(); ++i)
    out << (i + 1) << ',' << curves.oracle[i] << ',' << curves.sparsification[i] << ','
        << (curves.sparsification[i] - curves.oracle[i]) << '\n';
  return out.str();
}

}  // namespace posfuse
