#include "posfuse/fusion.hpp"

#include <cmath>

namespace posfuse {

std::string fusion_method_name(FusionMethod m) {
  switch (m) {
    case FusionMethod::Average: return "avg";
    case FusionMethod::InverseVariance: return "ivw";
    case FusionMethod::SpuriousRobust: return "sp";
    case FusionMethod::Single: return "single";
  }
  return "unknown";
}

FusionMethod fusion_method_from_name(const std::string& name) {
  if (name == "avg") return FusionMethod::Average;
  if (name == "ivw" || name == "mcd") return FusionMethod::InverseVariance;
  if (name == "sp") return FusionMethod::SpuriousRobust;
  if (name == "single") return FusionMethod::Single;
  throw ConfigError("unknown fusion method '" + name + "'");
}

FusedEstimate fuse_average(std::span<const UncertainEstimate> estimates) {
  if (estimates.empty()) throw DomainError("cannot fuse an empty estimate list");
  FusedEstimate fused;
  fused.method = FusionMethod::Average;
  for (const auto& e : estimates) {
    fused.x += e.x;
    fused.y += e.y;
  }
  const double n = static_cast<double>(estimates.size());
  fused.x /= n;
  fused.y /= n;
  fused.var_x = 1.0 / n;
  fused.var_y = 1.0 / n;
  return fused;
}

FusedEstimate fuse_ivw(std::span<const UncertainEstimate> estimates) {
  if (estimates.empty()) throw DomainError("cannot fuse an empty estimate list");
  double wx = 0.0, wy = 0.0, sx = 0.0, sy = 0.0;
  for (const auto& e : estimates) {
    if (!(e.var_x > 0.0) || !(e.var_y > 0.0))
      throw DomainError("inverse-variance fusion needs positive variances");
    wx += 1.0 / e.var_x;
    wy += 1.0 / e.var_y;
    sx += e.x / e.var_x;
    sy += e.y / e.var_y;
  }
  FusedEstimate fused;
  fused.method = FusionMethod::InverseVariance;
  fused.var_x = 1.0 / wx;
  fused.var_y = 1.0 / wy;
  fused.x = fused.var_x * sx;
  fused.y = fused.var_y * sy;
  return fused;
}

namespace {

// Inflation factor B/(B - D) computed as 1/(1 - r) with
// r = prod (delta^2 / (|delta| + lambda)^2), every factor in [0, 1); the
// product form never overflows regardless of the anchor count.
double sp_inflation(double own, std::span<const UncertainEstimate> estimates, std::size_t self,
                    bool coord_x, double lambda) {
  double ratio = 1.0;
  for (std::size_t l = 0; l < estimates.size(); ++l) {
    if (l == self) continue;
    double delta = std::abs(own - (coord_x ? estimates[l].x : estimates[l].y));
    if (delta == 0.0) return 1.0;  // D = 0: variance unchanged
    double f = delta / (delta + lambda);
    ratio *= f * f;
  }
  return 1.0 / std::max(1.0 - ratio, 1e-300);
}

}  // namespace

std::vector<UncertainEstimate> sp_adjust(std::span<const UncertainEstimate> estimates,
                                         const SPConfig& cfg) {
  if (estimates.size() < 2)
    throw DomainError("spurious-robust adjustment needs at least two estimates");
  if (!(cfg.lambda > 0.0)) throw DomainError("lambda must be positive");
  std::vector<UncertainEstimate> adjusted(estimates.begin(), estimates.end());
  for (std::size_t n = 0; n < estimates.size(); ++n) {
    adjusted[n].var_x = estimates[n].var_x *
                        sp_inflation(estimates[n].x, estimates, n, true, cfg.lambda);
    adjusted[n].var_y = estimates[n].var_y *
                        sp_inflation(estimates[n].y, estimates, n, false, cfg.lambda);
  }
  return adjusted;
}

FusedEstimate fuse_sp(std::span<const UncertainEstimate> estimates, const SPConfig& cfg) {
  std::vector<UncertainEstimate> adjusted = sp_adjust(estimates, cfg);
  FusedEstimate fused = fuse_ivw(adjusted);
  fused.method = FusionMethod::SpuriousRobust;
  return fused;
}

}  // namespace posfuse
