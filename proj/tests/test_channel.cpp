#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "posfuse/channel.hpp"
#include "posfuse/dataset.hpp"

using namespace posfuse;

namespace {

constexpr double kC = 299792458.0;

Environment single_anchor_env(std::uint32_t n_antennas, std::uint32_t n_subcarriers,
                              double boresight = 0.0) {
  Environment env;
  env.seed = 11;
  env.bounds = Bounds{0.0, 100.0, -50.0, 50.0};
  env.bandwidth_hz = 50e6;
  env.n_subcarriers = n_subcarriers;
  AnchorGeometry a;
  a.id = 0;
  a.label = "A";
  a.position = {0.0, 0.0};
  a.n_antennas = n_antennas;
  a.element_spacing_wl = 0.5;
  a.boresight_rad = boresight;
  env.anchors.push_back(a);
  return env;
}

}  // namespace

TEST_CASE("single direct path gives the analytic subcarrier phase ramp") {
  Environment env = single_anchor_env(1, 2);
  const Vec2 ue{30.0, 0.0};
  CsiTensor csi = synth_channel(env, env.anchors[0], ue);
  REQUIRE(csi.data.size() == 2);
  CHECK(std::abs(csi.at(0, 0)) == doctest::Approx(std::abs(csi.at(0, 1))).epsilon(1e-12));
  const double tau = 30.0 / kC;
  const double df = env.subcarrier_spacing_hz();
  std::complex<double> ratio = csi.at(0, 1) / csi.at(0, 0);
  std::complex<double> expected = std::polar(1.0, -2.0 * std::numbers::pi * df * tau);
  CHECK(std::abs(ratio - expected) < 1e-12);
}

TEST_CASE("synthesis is deterministic") {
  Environment env = make_desk_environment(3);
  const Vec2 ue{4.2, 7.7};
  CsiTensor a = synth_channel(env, env.anchors[1], ue);
  CsiTensor b = synth_channel(env, env.anchors[1], ue);
  REQUIRE(a.data.size() == b.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("boresight path excites all antennas identically") {
  Environment env = single_anchor_env(4, 8, 0.0);
  CsiTensor csi = synth_channel(env, env.anchors[0], Vec2{25.0, 0.0});
  for (std::uint32_t l = 0; l < 8; ++l)
    for (std::uint32_t m = 1; m < 4; ++m)
      CHECK(std::abs(csi.at(m, l) - csi.at(0, l)) < 1e-12);
}

TEST_CASE("UE outside bounds is rejected") {
  Environment env = single_anchor_env(2, 8);
  CHECK_THROWS_AS(synth_channel(env, env.anchors[0], Vec2{1000.0, 0.0}), DomainError);
}

TEST_CASE("blocked region removes the direct path") {
  Environment env = single_anchor_env(1, 8);
  env.anchors[0].los_blocked_region = {{20.0, -10.0}, {40.0, -10.0}, {40.0, 10.0}, {20.0, 10.0}};
  // no scatterers: a blocked direct path leaves an all-zero channel
  CsiTensor blocked = synth_channel(env, env.anchors[0], Vec2{30.0, 0.0});
  CHECK(blocked.energy() == 0.0);
  CsiTensor open = synth_channel(env, env.anchors[0], Vec2{50.0, 0.0});
  CHECK(open.energy() > 0.0);
}

TEST_CASE("angle-delay transform is unitary and invertible") {
  Environment env = make_desk_environment(5);
  CsiTensor csi = synth_channel(env, env.anchors[0], Vec2{3.0, 6.0});
  CsiTensor ad = to_angle_delay(csi);
  CHECK(ad.energy() == doctest::Approx(csi.energy()).epsilon(1e-10));
  CsiTensor back = from_angle_delay(ad);
  for (std::size_t i = 0; i < csi.data.size(); ++i)
    CHECK(std::abs(back.data[i] - csi.data[i]) < 1e-10);
}

TEST_CASE("angle-delay of zero tensor is zero") {
  CsiTensor zero = CsiTensor::zero(0, 4, 16);
  CHECK(to_angle_delay(zero).energy() == 0.0);
}

TEST_CASE("single far-field path concentrates in one angle-delay peak") {
  Environment env = single_anchor_env(8, 64, 0.3);
  CsiTensor ad = to_angle_delay(synth_channel(env, env.anchors[0], Vec2{60.0, 25.0}));
  std::uint32_t best_m = 0, best_l = 0;
  double best = -1.0;
  for (std::uint32_t m = 0; m < 8; ++m)
    for (std::uint32_t l = 0; l < 64; ++l)
      if (std::norm(ad.at(m, l)) > best) {
        best = std::norm(ad.at(m, l));
        best_m = m;
        best_l = l;
      }
  // brute-force energy sum over the peak 3x3 block (clipped), vs total
  double block = 0.0;
  for (int dm = -1; dm <= 1; ++dm)
    for (int dl = -1; dl <= 1; ++dl) {
      int m = static_cast<int>(best_m) + dm;
      int l = static_cast<int>(best_l) + dl;
      if (m < 0 || m >= 8 || l < 0 || l >= 64) continue;
      block += std::norm(ad.at(static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(l)));
    }
  CHECK(block / ad.energy() >= 0.5);
}

TEST_CASE("attenuation scales a sparse bin by the dB factor") {
  CsiTensor ad = CsiTensor::zero(0, 8, 16);
  ad.at(2, 5) = {3.0, -1.0};
  CsiTensor csi = from_angle_delay(ad);
  CsiTensor out = to_angle_delay(attenuate_strongest(csi, 20.0, 3));
  CHECK(std::abs(out.at(2, 5)) == doctest::Approx(0.1 * std::abs(std::complex<double>(3.0, -1.0)))
                                      .epsilon(1e-10));
}

TEST_CASE("attenuating a zero tensor returns zero") {
  CsiTensor zero = CsiTensor::zero(0, 4, 16);
  CHECK(attenuate_strongest(zero).energy() == 0.0);
}

TEST_CASE("bins separated by more than the window stay untouched") {
  CsiTensor ad = CsiTensor::zero(0, 8, 64);
  ad.at(1, 10) = {1.0, 0.0};
  ad.at(6, 40) = {0.5, 0.0};
  CsiTensor out = to_angle_delay(attenuate_strongest(from_angle_delay(ad), 20.0, 3));
  CHECK(std::abs(out.at(6, 40) - std::complex<double>(0.5, 0.0)) < 1e-10);
  CHECK(std::abs(out.at(1, 10) - std::complex<double>(0.1, 0.0)) < 1e-10);
}

TEST_CASE("attenuation strictly reduces energy of nonzero tensors") {
  auto rng = RngStream::keyed({99});
  for (int trial = 0; trial < 20; ++trial) {
    CsiTensor csi = CsiTensor::zero(0, 4, 16);
    for (auto& v : csi.data) v = {rng.next_uniform(-1.0, 1.0), rng.next_uniform(-1.0, 1.0)};
    CHECK(attenuate_strongest(csi).energy() < csi.energy());
  }
}

TEST_CASE("window must be odd") {
  CsiTensor csi = CsiTensor::zero(0, 4, 16);
  CHECK_THROWS_AS(attenuate_strongest(csi, 20.0, 2), DomainError);
  CHECK_THROWS_AS(attenuate_strongest(csi, 20.0, 0), DomainError);
}

TEST_CASE("fingerprint stacks planes and normalizes with training extrema") {
  CsiTensor csi = CsiTensor::zero(0, 2, 8);
  for (auto& v : csi.data) v = {1.0, 0.0};  // purely real
  NormStats stats{-1.0, 3.0};
  Fingerprint fp = to_fingerprint(csi, stats);
  for (std::size_t i = 0; i < csi.data.size(); ++i) {
    CHECK(fp.data[2 * i] == doctest::Approx(0.5));        // (1 - -1) / 4
    CHECK(fp.data[2 * i + 1] == doctest::Approx(0.25));   // image of zero
  }

  for (auto& v : csi.data) v = {3.0, 3.0};  // training max everywhere
  Fingerprint ones = to_fingerprint(csi, stats);
  for (float v : ones.data) CHECK(v == 1.0f);
}

TEST_CASE("fingerprint matches an independent min-max evaluation") {
  auto rng = RngStream::keyed({321});
  CsiTensor csi = CsiTensor::zero(0, 4, 8);
  for (auto& v : csi.data) v = {rng.next_uniform(-2.0, 2.0), rng.next_uniform(-2.0, 2.0)};
  NormStats stats = compute_norm_stats({&csi});
  Fingerprint fp = to_fingerprint(csi, stats);
  for (std::uint32_t m = 0; m < 4; ++m)
    for (std::uint32_t l = 0; l < 8; ++l) {
      std::size_t base = (static_cast<std::size_t>(m) * 8 + l) * 2;
      double re = (csi.at(m, l).real() - stats.min) / (stats.max - stats.min);
      double im = (csi.at(m, l).imag() - stats.min) / (stats.max - stats.min);
      CHECK(std::abs(fp.data[base] - re) < 1e-7);      // f32 storage
      CHECK(std::abs(fp.data[base + 1] - im) < 1e-7);
      CHECK(std::abs(static_cast<double>(fp.data[base]) -
                     std::clamp(re, 0.0, 1.0)) < 1e-7);
    }
}

TEST_CASE("degenerate normalization stats are rejected") {
  CsiTensor csi = CsiTensor::zero(0, 2, 8);
  CHECK_THROWS_AS(to_fingerprint(csi, NormStats{1.0, 1.0}), DataError);
}

TEST_CASE("fingerprints separate positions more than 1 m apart") {
  Environment env = make_desk_environment(17);
  env.n_subcarriers = 16;
  for (auto& a : env.anchors) a.n_antennas = 4;

  // training extrema from a handful of reference positions
  std::vector<CsiTensor> train;
  auto rng = RngStream::keyed({env.seed, 1234});
  for (int i = 0; i < 32; ++i)
    train.push_back(synth_channel(env, env.anchors[0],
                                  Vec2{rng.next_uniform(0, 10), rng.next_uniform(0, 10)}));
  std::vector<const CsiTensor*> refs;
  for (const auto& t : train) refs.push_back(&t);
  NormStats stats = compute_norm_stats(refs);

  int checked = 0;
  while (checked < 1000) {
    Vec2 p1{rng.next_uniform(0, 10), rng.next_uniform(0, 10)};
    Vec2 p2{rng.next_uniform(0, 10), rng.next_uniform(0, 10)};
    if (distance(p1, p2) <= 1.0) continue;
    Fingerprint f1 = to_fingerprint(synth_channel(env, env.anchors[0], p1), stats);
    Fingerprint f2 = to_fingerprint(synth_channel(env, env.anchors[0], p2), stats);
    double l2 = 0.0;
    for (std::size_t i = 0; i < f1.data.size(); ++i) {
      double d = static_cast<double>(f1.data[i]) - f2.data[i];
      l2 += d * d;
    }
    CHECK(l2 > 0.0);
    ++checked;
  }
}

TEST_CASE("environment JSON round trip preserves the descriptor hash") {
  Environment env = make_desk_environment(9);
  Environment back = Environment::from_json(env.to_json());
  CHECK(back.descriptor_hash() == env.descriptor_hash());
  CHECK(back.anchors.size() == env.anchors.size());
  CHECK(back.scatterers.size() == env.scatterers.size());
}

TEST_CASE("environment invariants are enforced") {
  Environment env = make_desk_environment(1);
  env.anchors.resize(1);
  CHECK_THROWS_AS(env.validate(), ConfigError);
  env = make_desk_environment(1);
  env.n_subcarriers = 4;
  CHECK_THROWS_AS(env.validate(), ConfigError);
  env = make_desk_environment(1);
  env.anchors[0].element_spacing_wl = 0.0;
  CHECK_THROWS_AS(env.validate(), ConfigError);
}
