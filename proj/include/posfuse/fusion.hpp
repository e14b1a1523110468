#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posfuse/common.hpp"

namespace posfuse {

/// One anchor's position estimate with per-coordinate combined variances.
struct UncertainEstimate {
  std::uint32_t anchor_id = 0;
  double x = 0.0;
  double y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
};

struct SPConfig {
  double lambda = 0.01;  // meters
};

enum class FusionMethod : std::uint8_t { Average = 0, InverseVariance = 1, SpuriousRobust = 2, Single = 3 };

std::string fusion_method_name(FusionMethod m);
FusionMethod fusion_method_from_name(const std::string& name);  // ConfigError on unknown

struct FusedEstimate {
  double x = 0.0;
  double y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
  FusionMethod method = FusionMethod::Average;
};

/// Arithmetic mean per coordinate; equals inverse-variance weighting with
/// all variances set to 1, so the fused variance is 1/N.
FusedEstimate fuse_average(std::span<const UncertainEstimate> estimates);

/// Maximum-likelihood combination of independent Gaussian estimates,
/// per coordinate: var = 1/sum(1/var_n), mean = var * sum(x_n/var_n).
FusedEstimate fuse_ivw(std::span<const UncertainEstimate> estimates);

/// Spurious-robust variance inflation. Per coordinate and anchor n the
/// variance grows by B/(B - D) where D = prod_{l != n} (x_n - x_l)^2 and
/// B = prod_{l != n} (|x_n - x_l| + lambda)^2; agreement leaves it
/// unchanged, disagreement drives it to infinity.
std::vector<UncertainEstimate> sp_adjust(std::span<const UncertainEstimate> estimates,
                                         const SPConfig& cfg);

/// sp_adjust followed by fuse_ivw.
FusedEstimate fuse_sp(std::span<const UncertainEstimate> estimates, const SPConfig& cfg);

}  // namespace posfuse
