#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posfuse/common.hpp"
#include "posfuse/rng.hpp"

namespace posfuse {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

struct Bounds {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool contains(const Vec2& p) const {
    return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
  }
  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
};

/// Even-odd-rule point-in-polygon test. Vertices in order, implicit closure.
bool polygon_contains(const std::vector<Vec2>& poly, const Vec2& p);

struct AnchorGeometry {
  std::uint32_t id = 0;
  std::string label;          // display name, defaults to "A", "B", ...
  Vec2 position;
  std::uint32_t n_antennas = 8;        // uniform linear array
  double element_spacing_wl = 0.5;     // in carrier wavelengths
  double boresight_rad = 0.0;
  std::vector<Vec2> los_blocked_region;  // empty: direct path never blocked

  bool direct_path_blocked(const Vec2& ue) const {
    return !los_blocked_region.empty() && polygon_contains(los_blocked_region, ue);
  }
};

struct Scatterer {
  Vec2 position;
  std::complex<double> reflectivity{1.0, 0.0};
};

struct Environment {
  Bounds bounds;
  std::vector<AnchorGeometry> anchors;
  std::vector<Scatterer> scatterers;
  double carrier_frequency_hz = 1.272e9;
  double bandwidth_hz = 50e6;
  std::uint32_t n_subcarriers = 64;
  std::uint64_t seed = 1;

  double subcarrier_spacing_hz() const {
    return bandwidth_hz / static_cast<double>(n_subcarriers);
  }

  /// Throws ConfigError on violated invariants (>=2 anchors, finite
  /// positions, n_subcarriers >= 8, positive spacing).
  void validate() const;

  /// Canonical JSON serialization; hash of it identifies the environment.
  std::string to_json() const;
  std::uint64_t descriptor_hash() const;

  static Environment from_json(const std::string& text);
  static Environment load(const std::string& path);
  void save(const std::string& path) const;
};

/// Desk-scale default: 10 m x 10 m area, 4 corner anchors (8-element ULAs
/// facing the center), 20 seeded scatterers, two anchors with a blocked
/// sector behind a central obstacle.
Environment make_desk_environment(std::uint64_t seed);

/// Complex channel matrix of one anchor, antenna-major storage
/// (entry(m, l) = antennas m, subcarrier l).
struct CsiTensor {
  std::uint32_t anchor_id = 0;
  std::uint32_t n_antennas = 0;
  std::uint32_t n_subcarriers = 0;
  std::vector<std::complex<double>> data;  // n_antennas * n_subcarriers

  static CsiTensor zero(std::uint32_t anchor_id, std::uint32_t n_r, std::uint32_t n_c) {
    return CsiTensor{anchor_id, n_r, n_c,
                     std::vector<std::complex<double>>(static_cast<std::size_t>(n_r) * n_c)};
  }
  std::complex<double>& at(std::uint32_t m, std::uint32_t l) {
    return data[static_cast<std::size_t>(m) * n_subcarriers + l];
  }
  const std::complex<double>& at(std::uint32_t m, std::uint32_t l) const {
    return data[static_cast<std::size_t>(m) * n_subcarriers + l];
  }
  double energy() const;  // squared Frobenius norm
};

/// Geometry-based single-bounce channel: direct path (unless the UE is in
/// the anchor's blocked region) plus one path per scatterer. Path phases are
/// drawn from a stream keyed by (env.seed, anchor id, path index), so the
/// tensor is a deterministic function of (env, anchor, ue_pos).
CsiTensor synth_channel(const Environment& env, const AnchorGeometry& anchor,
                        const Vec2& ue_pos);

/// Unitary DFT over the antenna axis, unitary inverse DFT over the
/// subcarrier axis: antenna-subcarrier -> angle-delay.
CsiTensor to_angle_delay(const CsiTensor& csi);

/// Inverse of to_angle_delay.
CsiTensor from_angle_delay(const CsiTensor& csi);

/// Attenuates the window x window block around the strongest angle-delay
/// bin by atten_db (block clipped at tensor borders, no wraparound) and
/// transforms back.
CsiTensor attenuate_strongest(const CsiTensor& csi, double atten_db = 20.0,
                              std::uint32_t window = 3);

}  // namespace posfuse
