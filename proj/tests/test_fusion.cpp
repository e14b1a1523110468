#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "posfuse/fusion.hpp"
#include "posfuse/rng.hpp"

using namespace posfuse;

namespace {

std::vector<UncertainEstimate> random_estimates(RngStream& rng, std::size_t n) {
  std::vector<UncertainEstimate> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(UncertainEstimate{static_cast<std::uint32_t>(i), rng.next_uniform(-10, 10),
                                    rng.next_uniform(-10, 10), rng.next_uniform(0.01, 4.0),
                                    rng.next_uniform(0.01, 4.0)});
  return out;
}

// Direct evaluation of the published form: b^2 = 2 sigma^2 B with
// B = prod (|dx| + lambda)^2, then sigma'^2 = sigma^2 b^2 / (b^2 - 2 sigma^2 D).
double sp_reference(const std::vector<double>& xs, const std::vector<double>& vars,
                    std::size_t n, double lambda) {
  double d_prod = 1.0, b_prod = 1.0;
  for (std::size_t l = 0; l < xs.size(); ++l) {
    if (l == n) continue;
    double delta = xs[n] - xs[l];
    d_prod *= delta * delta;
    b_prod *= (std::abs(delta) + lambda) * (std::abs(delta) + lambda);
  }
  double b_sq = 2.0 * vars[n] * b_prod;
  return vars[n] * b_sq / (b_sq - 2.0 * vars[n] * d_prod);
}

}  // namespace

TEST_CASE("averaging a single estimate returns it") {
  UncertainEstimate e{3, 1.5, -2.0, 0.3, 0.4};
  FusedEstimate f = fuse_average({&e, 1});
  CHECK(f.x == 1.5);
  CHECK(f.y == -2.0);
  CHECK(f.var_x == doctest::Approx(1.0));
}

TEST_CASE("averaging is symmetric and matches unit-variance IVW") {
  std::vector<UncertainEstimate> pair{{0, 0.0, 4.0, 0.5, 0.5}, {1, 2.0, 0.0, 3.0, 3.0}};
  FusedEstimate avg = fuse_average(pair);
  CHECK(avg.x == doctest::Approx(1.0));
  CHECK(avg.y == doctest::Approx(2.0));

  auto rng = RngStream::keyed({31});
  auto estimates = random_estimates(rng, 4);
  std::vector<UncertainEstimate> unit = estimates;
  for (auto& e : unit) e.var_x = e.var_y = 1.0;
  FusedEstimate a = fuse_average(estimates);
  FusedEstimate i = fuse_ivw(unit);
  CHECK(a.x == doctest::Approx(i.x).epsilon(1e-14));
  CHECK(a.y == doctest::Approx(i.y).epsilon(1e-14));
  CHECK(a.var_x == doctest::Approx(i.var_x).epsilon(1e-14));
}

TEST_CASE("IVW hand case") {
  std::vector<UncertainEstimate> est{{0, 0.0, 0.0, 1.0, 1.0}, {1, 3.0, 3.0, 2.0, 2.0}};
  FusedEstimate f = fuse_ivw(est);
  CHECK(f.var_x == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(f.x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("IVW with equal variances is the mean with halved variance") {
  std::vector<UncertainEstimate> est{{0, 0.0, 1.0, 0.8, 0.8}, {1, 2.0, 3.0, 0.8, 0.8}};
  FusedEstimate f = fuse_ivw(est);
  CHECK(f.x == doctest::Approx(1.0));
  CHECK(f.var_x == doctest::Approx(0.4));
}

TEST_CASE("a huge-variance estimate has vanishing weight") {
  auto rng = RngStream::keyed({32});
  auto est = random_estimates(rng, 3);
  FusedEstimate base = fuse_ivw(est);
  est.push_back(UncertainEstimate{9, 500.0, -500.0, 1e12, 1e12});
  FusedEstimate with = fuse_ivw(est);
  CHECK(std::abs(with.x - base.x) < 1e-6);
  CHECK(std::abs(with.y - base.y) < 1e-6);
}

TEST_CASE("IVW validates inputs") {
  CHECK_THROWS_AS(fuse_ivw({}), DomainError);
  std::vector<UncertainEstimate> bad{{0, 0.0, 0.0, 0.0, 1.0}};
  CHECK_THROWS_AS(fuse_ivw(bad), DomainError);
}

TEST_CASE("SP leaves agreeing estimates untouched") {
  std::vector<UncertainEstimate> est{{0, 1.0, 2.0, 0.5, 0.7}, {1, 1.0, 2.0, 0.9, 0.3},
                                     {2, 1.0, 2.0, 1.1, 1.9}};
  auto adjusted = sp_adjust(est, SPConfig{0.01});
  for (std::size_t i = 0; i < est.size(); ++i) {
    CHECK(adjusted[i].var_x == doctest::Approx(est[i].var_x).epsilon(1e-12));
    CHECK(adjusted[i].var_y == doctest::Approx(est[i].var_y).epsilon(1e-12));
  }
  FusedEstimate sp = fuse_sp(est, SPConfig{0.01});
  FusedEstimate ivw = fuse_ivw(est);
  CHECK(sp.x == doctest::Approx(ivw.x).epsilon(1e-12));
  CHECK(sp.var_x == doctest::Approx(ivw.var_x).epsilon(1e-12));
}

TEST_CASE("SP hand case: unit variances, estimates {0, 1}, lambda 0.01") {
  std::vector<UncertainEstimate> est{{0, 0.0, 0.0, 1.0, 1.0}, {1, 1.0, 1.0, 1.0, 1.0}};
  auto adjusted = sp_adjust(est, SPConfig{0.01});
  const double expected = 1.0201 / 0.0201;
  for (const auto& e : adjusted) {
    CHECK(e.var_x == doctest::Approx(expected).epsilon(1e-9));
    CHECK(e.var_y == doctest::Approx(expected).epsilon(1e-9));
  }
  // independent direct evaluation of the published formulas
  double ref = sp_reference({0.0, 1.0}, {1.0, 1.0}, 0, 0.01);
  CHECK(adjusted[0].var_x == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("SP inflation matches the direct two-product form on random inputs") {
  auto rng = RngStream::keyed({33});
  for (int trial = 0; trial < 200; ++trial) {
    auto est = random_estimates(rng, 2 + rng.next_below(4));
    auto adjusted = sp_adjust(est, SPConfig{0.01});
    std::vector<double> xs, vars;
    for (const auto& e : est) {
      xs.push_back(e.x);
      vars.push_back(e.var_x);
    }
    for (std::size_t n = 0; n < est.size(); ++n) {
      double ref = sp_reference(xs, vars, n, 0.01);
      CHECK(adjusted[n].var_x == doctest::Approx(ref).epsilon(1e-9));
    }
  }
}

TEST_CASE("SP variances grow without bound as disagreement grows") {
  std::vector<UncertainEstimate> est{{0, 0.0, 0.0, 1.0, 1.0}, {1, 10.0, 0.0, 1.0, 1.0}};
  double prev = 0.0;
  for (double gap : {1.0, 10.0, 100.0, 1000.0}) {
    est[1].x = gap;
    double inflated = sp_adjust(est, SPConfig{0.01})[1].var_x;
    CHECK(inflated > prev);
    prev = inflated;
  }
  CHECK(prev > 1e3);
}

TEST_CASE("SP never shrinks a variance and always stays positive") {
  auto rng = RngStream::keyed({34});
  for (int trial = 0; trial < 1000; ++trial) {
    auto est = random_estimates(rng, 2 + rng.next_below(5));
    auto adjusted = sp_adjust(est, SPConfig{0.01});
    for (std::size_t i = 0; i < est.size(); ++i) {
      CHECK(adjusted[i].var_x >= est[i].var_x);
      CHECK(adjusted[i].var_y >= est[i].var_y);
      CHECK(adjusted[i].var_x > 0.0);
      CHECK(adjusted[i].var_y > 0.0);
    }
  }
}

TEST_CASE("SP downweights a confident outlier harder than plain IVW") {
  std::vector<UncertainEstimate> est{{0, 0.0, 0.0, 0.05, 0.05},
                                     {1, 0.1, -0.1, 0.05, 0.05},
                                     {2, -0.1, 0.1, 0.05, 0.05},
                                     {3, 5.0, -5.0, 0.01, 0.01}};
  const double cluster_x = 0.0, cluster_y = 0.0;
  FusedEstimate ivw = fuse_ivw(est);
  FusedEstimate sp = fuse_sp(est, SPConfig{0.01});
  double ivw_dist = std::hypot(ivw.x - cluster_x, ivw.y - cluster_y);
  double sp_dist = std::hypot(sp.x - cluster_x, sp.y - cluster_y);
  CHECK(sp_dist < ivw_dist);
}

TEST_CASE("symmetric two-anchor disagreement fuses to the midpoint") {
  std::vector<UncertainEstimate> est{{0, 0.0, 0.0, 1.0, 1.0}, {1, 4.0, 0.0, 1.0, 1.0}};
  FusedEstimate sp = fuse_sp(est, SPConfig{0.01});
  CHECK(sp.x == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("SP preconditions") {
  std::vector<UncertainEstimate> one{{0, 0.0, 0.0, 1.0, 1.0}};
  CHECK_THROWS_AS(sp_adjust(one, SPConfig{0.01}), DomainError);
  std::vector<UncertainEstimate> two{{0, 0.0, 0.0, 1.0, 1.0}, {1, 1.0, 0.0, 1.0, 1.0}};
  CHECK_THROWS_AS(sp_adjust(two, SPConfig{0.0}), DomainError);
}

TEST_CASE("fused variances never exceed any input variance (IVW optimality)") {
  auto rng = RngStream::keyed({35});
  for (int trial = 0; trial < 500; ++trial) {
    auto est = random_estimates(rng, 1 + rng.next_below(6));
    FusedEstimate f = fuse_ivw(est);
    for (const auto& e : est) {
      CHECK(f.var_x <= e.var_x + 1e-15);
      CHECK(f.var_y <= e.var_y + 1e-15);
    }
  }
}

TEST_CASE("fused means stay in the convex hull of the inputs") {
  auto rng = RngStream::keyed({36});
  for (int trial = 0; trial < 300; ++trial) {
    auto est = random_estimates(rng, 2 + rng.next_below(4));
    double lo_x = est[0].x, hi_x = est[0].x, lo_y = est[0].y, hi_y = est[0].y;
    for (const auto& e : est) {
      lo_x = std::min(lo_x, e.x);
      hi_x = std::max(hi_x, e.x);
      lo_y = std::min(lo_y, e.y);
      hi_y = std::max(hi_y, e.y);
    }
    for (const FusedEstimate& f :
         {fuse_average(est), fuse_ivw(est), fuse_sp(est, SPConfig{0.01})}) {
      CHECK(f.x >= lo_x - 1e-12);
      CHECK(f.x <= hi_x + 1e-12);
      CHECK(f.y >= lo_y - 1e-12);
      CHECK(f.y <= hi_y + 1e-12);
    }
  }
}

TEST_CASE("SP is translation invariant") {
  auto rng = RngStream::keyed({37});
  auto est = random_estimates(rng, 4);
  auto shifted = est;
  const double dx = 12.34, dy = -5.6;
  for (auto& e : shifted) {
    e.x += dx;
    e.y += dy;
  }
  auto adj = sp_adjust(est, SPConfig{0.01});
  auto adj_shifted = sp_adjust(shifted, SPConfig{0.01});
  for (std::size_t i = 0; i < est.size(); ++i) {
    CHECK(adj_shifted[i].var_x == doctest::Approx(adj[i].var_x).epsilon(1e-12));
    CHECK(adj_shifted[i].var_y == doctest::Approx(adj[i].var_y).epsilon(1e-12));
  }
  FusedEstimate f = fuse_sp(est, SPConfig{0.01});
  FusedEstimate g = fuse_sp(shifted, SPConfig{0.01});
  CHECK(g.x == doctest::Approx(f.x + dx).epsilon(1e-10));
  CHECK(g.y == doctest::Approx(f.y + dy).epsilon(1e-10));
}

TEST_CASE("fusion is permutation invariant") {
  auto rng = RngStream::keyed({38});
  auto est = random_estimates(rng, 5);
  auto shuffled = est;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[0], shuffled[2]);
  for (auto fuse : {+[](std::span<const UncertainEstimate> e) { return fuse_average(e); },
                    +[](std::span<const UncertainEstimate> e) { return fuse_ivw(e); },
                    +[](std::span<const UncertainEstimate> e) {
                      return fuse_sp(e, SPConfig{0.01});
                    }}) {
    FusedEstimate a = fuse(est);
    FusedEstimate b = fuse(shuffled);
    CHECK(a.x == doctest::Approx(b.x).epsilon(1e-12));
    CHECK(a.y == doctest::Approx(b.y).epsilon(1e-12));
    CHECK(a.var_x == doctest::Approx(b.var_x).epsilon(1e-12));
  }
}
