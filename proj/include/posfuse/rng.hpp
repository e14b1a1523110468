#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace posfuse {

// Counter-based keyed random stream. Every consumer derives its stream from
// (seed, purpose, indices...), so values are a pure function of the key and
// the draw counter. Generation order across samples, anchors or MC passes
// therefore never affects the result.
enum class StreamKind : std::uint64_t {
  PathPhase = 1,
  Position = 2,
  Scatterer = 3,
  WeightInit = 4,
  Dropout = 5,
  Shuffle = 6,
  McdPass = 7,
  Eval = 8,
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key) : key_(key) {}

  static RngStream keyed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x2545f4914f6cdd1dULL;
    for (std::uint64_t p : parts) h = detail::splitmix64(h ^ p);
    return RngStream(h);
  }

  RngStream substream(std::uint64_t index) const {
    return RngStream(detail::splitmix64(key_ ^ detail::splitmix64(index)));
  }

  std::uint64_t next_u64() {
    return detail::splitmix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform in [0, 1).
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  double next_angle() { return next_uniform(0.0, 2.0 * std::numbers::pi); }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace posfuse
