#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "posfuse/channel.hpp"

namespace posfuse {

/// Per-anchor min/max over the training split, shared by the real and
/// imaginary planes.
struct NormStats {
  double min = 0.0;
  double max = 0.0;
};

/// Real-valued NN input: Re/Im planes stacked along the third axis and
/// min-max normalized to [0, 1]. Flat storage is antenna-major,
/// subcarrier-minor, plane-last: index = (m * n_subcarriers + l) * 2 + plane.
struct Fingerprint {
  std::uint32_t anchor_id = 0;
  std::uint32_t n_antennas = 0;
  std::uint32_t n_subcarriers = 0;
  std::vector<float> data;  // n_antennas * n_subcarriers * 2

  std::size_t size() const { return data.size(); }
};

/// Throws DataError when stats are degenerate (max == min). Values outside
/// the training extrema are clamped to [0, 1].
Fingerprint to_fingerprint(const CsiTensor& csi, const NormStats& norm);

/// Min/max over the real and imaginary parts of a set of tensors.
NormStats compute_norm_stats(const std::vector<const CsiTensor*>& tensors);

enum class ScenarioKind : std::uint8_t { Static = 0, Dynamic = 1 };

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Static;
  std::set<std::uint32_t> changed_anchors;  // ids attenuated at deployment
  double atten_db = 20.0;
  std::uint32_t window = 3;

  bool is_static() const { return kind == ScenarioKind::Static; }
  std::string name() const;
  static ScenarioSpec static_scenario() { return {}; }
  static ScenarioSpec dynamic(std::set<std::uint32_t> anchors, double atten_db = 20.0,
                              std::uint32_t window = 3);
  /// Parses "static" or "dynamic:A,B" / "dynamic:0,1" against an environment.
  static ScenarioSpec parse(const std::string& text, const Environment& env);
};

/// Scenario tag of one sample, stored as one byte in the container:
/// 0 = static, otherwise a bitmask of attenuated anchor indices.
std::uint8_t encode_scenario_tag(const ScenarioSpec& s);

struct Sample {
  Vec2 position;
  std::vector<Fingerprint> fingerprints;  // one per anchor, id order
  std::uint8_t scenario_tag = 0;
};

struct SplitSpec {
  std::uint32_t n_train = 0;
  std::uint32_t n_val = 0;
  std::uint32_t n_test = 0;

  std::uint32_t total() const { return n_train + n_val + n_test; }

  /// Default carve-up of n samples: optional test fraction first, then a
  /// 90/10 train/validation split of the remaining pool.
  static SplitSpec from_total(std::uint32_t n_samples, double test_frac = 0.0);
  static SplitSpec counts(std::uint32_t n_train, std::uint32_t n_val, std::uint32_t n_test) {
    return SplitSpec{n_train, n_val, n_test};
  }
};

struct Dataset {
  std::uint32_t n_anchors = 0;
  std::uint32_t n_antennas = 0;
  std::uint32_t n_subcarriers = 0;
  std::uint64_t env_hash = 0;
  std::vector<Sample> samples;
  std::vector<std::uint32_t> train_idx;
  std::vector<std::uint32_t> val_idx;
  std::vector<std::uint32_t> test_idx;

  std::size_t fingerprint_dim() const {
    return static_cast<std::size_t>(n_antennas) * n_subcarriers * 2;
  }
  void validate() const;  // throws DataError on violated invariants

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
  std::vector<std::byte> serialize() const;
  static Dataset deserialize(const std::vector<std::byte>& bytes);
  std::uint64_t content_hash() const;
};

/// Synthesizes a dataset: uniform UE positions, per-anchor CSI, per-anchor
/// min-max stats from the training split only; in a dynamic scenario the
/// strongest-path attenuation is applied to the test split of the named
/// anchors before normalization. Deterministic given (env, split, scenario).
Dataset gen_dataset(const Environment& env, const SplitSpec& split,
                    const ScenarioSpec& scenario);

inline Dataset gen_dataset(const Environment& env, std::uint32_t n_samples,
                           const ScenarioSpec& scenario) {
  return gen_dataset(env, SplitSpec::from_total(n_samples), scenario);
}

}  // namespace posfuse
