#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "posfuse/nn.hpp"

using namespace posfuse;

namespace {

Fingerprint make_fp(std::vector<float> values) {
  Fingerprint fp;
  fp.anchor_id = 0;
  fp.n_antennas = 1;
  fp.n_subcarriers = static_cast<std::uint32_t>(values.size() / 2);
  fp.data = std::move(values);
  return fp;
}

}  // namespace

TEST_CASE("zero weights give zero outputs") {
  auto rng = RngStream::keyed({1});
  Trunk trunk = make_trunk(4, {3}, 0.0, rng);
  Head head = make_head(0, 3, {3}, LossMode::Mse, 0.0, rng);
  std::vector<double> zeros(trunk.mlp.parameter_count(), 0.0);
  set_params(trunk.mlp, zeros);
  zeros.assign(head.mlp.parameter_count(), 0.0);
  set_params(head.mlp, zeros);
  Vector out = forward(trunk, head, make_fp({1.0f, 2.0f, 3.0f, 4.0f}), false, nullptr);
  CHECK(out(0) == 0.0);
  CHECK(out(1) == 0.0);
}

TEST_CASE("dropout rate zero matches the deterministic forward") {
  auto rng = RngStream::keyed({2});
  Trunk trunk = make_trunk(4, {5}, 0.0, rng);
  Head head = make_head(0, 5, {4}, LossMode::Nll, 0.0, rng);
  Fingerprint fp = make_fp({0.1f, 0.9f, 0.4f, 0.7f});
  auto drop_rng = RngStream::keyed({3});
  Vector with = forward(trunk, head, fp, true, &drop_rng);
  Vector without = forward(trunk, head, fp, false, nullptr);
  for (int i = 0; i < 4; ++i) CHECK(with(i) == without(i));
}

TEST_CASE("a single linear layer reproduces a naive matrix multiply") {
  auto rng = RngStream::keyed({4});
  Mlp linear = make_mlp(3, {}, 2, /*final_linear=*/true, 0.0, rng);
  Matrix x(2, 3);
  x << 1.0, -2.0, 0.5, 0.0, 3.0, -1.5;
  Matrix out = mlp_forward(linear, x, false, nullptr, nullptr);
  for (int r = 0; r < 2; ++r)
    for (int o = 0; o < 2; ++o) {
      double acc = linear.layers[0].bias(o);
      for (int c = 0; c < 3; ++c) acc += linear.layers[0].weights(o, c) * x(r, c);
      CHECK(out(r, o) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("shape mismatches are rejected") {
  auto rng = RngStream::keyed({5});
  Trunk trunk = make_trunk(4, {3}, 0.0, rng);
  Head head = make_head(0, 3, {3}, LossMode::Mse, 0.0, rng);
  CHECK_THROWS_AS(forward(trunk, head, make_fp({1.0f, 2.0f}), false, nullptr), DomainError);
}

TEST_CASE("MSE loss definition and gradient") {
  Matrix out(1, 2), labels(1, 2);
  out << 1.0, 0.0;
  labels << 0.0, 0.0;
  LossGrad lg = mse_loss(out, labels);
  CHECK(lg.loss == doctest::Approx(1.0));

  labels = out;
  lg = mse_loss(out, labels);
  CHECK(lg.loss == 0.0);
  CHECK(lg.d_out.cwiseAbs().maxCoeff() == 0.0);

  // finite differences on the raw outputs
  auto rng = RngStream::keyed({6});
  Matrix o(5, 2), y(5, 2);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 2; ++c) {
      o(r, c) = rng.next_uniform(-2, 2);
      y(r, c) = rng.next_uniform(-2, 2);
    }
  LossGrad base = mse_loss(o, y);
  const double h = 1e-6;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 2; ++c) {
      Matrix up = o, down = o;
      up(r, c) += h;
      down(r, c) -= h;
      double fd = (mse_loss(up, y).loss - mse_loss(down, y).loss) / (2 * h);
      CHECK(gradcheck::rel_err(base.d_out(r, c), fd) < 1e-4);
    }
}

TEST_CASE("NLL loss reduces to half the MSE at unit variance") {
  auto rng = RngStream::keyed({7});
  Matrix out(6, 4), labels(6, 2);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 2; ++c) {
      out(r, c) = rng.next_uniform(-2, 2);
      labels(r, c) = rng.next_uniform(-2, 2);
      out(r, c + 2) = 0.0;  // s = log sigma^2 = 0
    }
  }
  double nll = nll_loss(out, labels).loss;
  double mse = mse_loss(out.leftCols(2), labels).loss;
  CHECK(nll == doctest::Approx(mse / 2.0).epsilon(1e-12));
}

TEST_CASE("NLL is stationary at s = log(e^2)") {
  // fixed squared error 2: the 1-D optimum over s solves e^2 exp(-s) = 1
  Matrix out(1, 4), labels(1, 2);
  out << std::sqrt(2.0), 0.0, std::log(2.0), 0.0;
  labels << 0.0, 0.0;
  LossGrad lg = nll_loss(out, labels);
  CHECK(std::abs(lg.d_out(0, 2)) < 1e-12);
}

TEST_CASE("NLL gradient matches finite differences") {
  auto rng = RngStream::keyed({8});
  Matrix o(4, 4), y(4, 2);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) o(r, c) = rng.next_uniform(-1.5, 1.5);
    for (int c = 0; c < 2; ++c) y(r, c) = rng.next_uniform(-1.5, 1.5);
  }
  LossGrad base = nll_loss(o, y);
  const double h = 1e-6;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      Matrix up = o, down = o;
      up(r, c) += h;
      down(r, c) -= h;
      double fd = (nll_loss(up, y).loss - nll_loss(down, y).loss) / (2 * h);
      CHECK(gradcheck::rel_err(base.d_out(r, c), fd) < 1e-4);
    }
}

TEST_CASE("MTL loss is the plain sum over anchors") {
  auto rng = RngStream::keyed({9});
  Matrix out(3, 2), labels(3, 2);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) {
      out(r, c) = rng.next_uniform(-1, 1);
      labels(r, c) = rng.next_uniform(-1, 1);
    }
  MtlLoss single = mtl_loss({out}, {labels}, LossMode::Mse);
  CHECK(single.total == doctest::Approx(mse_loss(out, labels).loss));
  MtlLoss twice = mtl_loss({out, out}, {labels, labels}, LossMode::Mse);
  CHECK(twice.total == doctest::Approx(2.0 * single.total).epsilon(1e-15));
  CHECK_THROWS_AS(mtl_loss({out}, {labels, labels}, LossMode::Mse), DomainError);
  CHECK_THROWS_AS(mtl_loss({}, {}, LossMode::Mse), DomainError);
}

TEST_CASE("MTL trunk gradient equals the sum of per-anchor trunk gradients") {
  gradcheck::TestNet joint = gradcheck::make_random_net(42, LossMode::Nll, 3);
  std::vector<double> joint_grad = gradcheck::net_analytic_grad(joint);
  const std::size_t trunk_params = joint.trunk.mlp.parameter_count();

  std::vector<double> summed(trunk_params, 0.0);
  for (std::size_t t = 0; t < joint.heads.size(); ++t) {
    gradcheck::TestNet solo;
    solo.mode = joint.mode;
    solo.trunk = joint.trunk;
    solo.heads = {joint.heads[t]};
    solo.inputs = {joint.inputs[t]};
    solo.labels = joint.labels;
    std::vector<double> g = gradcheck::net_analytic_grad(solo);
    for (std::size_t i = 0; i < trunk_params; ++i) summed[i] += g[i];
  }
  for (std::size_t i = 0; i < trunk_params; ++i)
    CHECK(std::abs(joint_grad[i] - summed[i]) < 1e-10);
}

TEST_CASE("Adam matches the hand-evaluated update") {
  std::vector<double> params{0.5, -1.0};
  std::vector<double> grads{0.2, -0.4};
  AdamState state = AdamState::for_size(2, 1e-3);
  adam_step(params, grads, state);
  // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
  for (int i = 0; i < 2; ++i) {
    double expected = (i == 0 ? 0.5 : -1.0) -
                      1e-3 * grads[i] / (std::sqrt(grads[i] * grads[i]) + 1e-8);
    CHECK(params[i] == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(state.step == 1);
}

TEST_CASE("Adam leaves parameters alone on zero gradients") {
  std::vector<double> params{1.0, 2.0, -3.0};
  std::vector<double> zeros(3, 0.0);
  AdamState state = AdamState::for_size(3, 1e-2);
  adam_step(params, zeros, state);
  CHECK(params == std::vector<double>{1.0, 2.0, -3.0});
  CHECK(state.step == 1);
}

TEST_CASE("Adam steps move against a constant gradient") {
  std::vector<double> params{0.0};
  AdamState state = AdamState::for_size(1, 1e-2);
  std::vector<double> grad{0.7};
  for (int i = 0; i < 50; ++i) adam_step(params, grad, state);
  CHECK(params[0] < 0.0);
}

TEST_CASE("Adam rejects non-finite gradients") {
  std::vector<double> params{0.0};
  std::vector<double> grad{std::numeric_limits<double>::quiet_NaN()};
  AdamState state = AdamState::for_size(1, 1e-2);
  CHECK_THROWS_AS(adam_step(params, grad, state), NumericError);
}

TEST_CASE("MC-pass combination reproduces the hand-computed variance") {
  Matrix passes(2, 2);
  passes << 1.0, 5.0, 3.0, 5.0;  // x in {1, 3}
  Prediction p = combine_mcd_passes(passes, LossMode::Mse);
  CHECK(p.x == doctest::Approx(2.0));
  CHECK(p.epistemic_var_x == doctest::Approx(1.0).epsilon(1e-12));  // (1+9)/2 - 4
  CHECK(p.epistemic_var_y == doctest::Approx(0.0));
  CHECK(p.aleatoric_var_x == 0.0);
  CHECK(p.var_x == doctest::Approx(1.0));
}

TEST_CASE("zero dropout gives exactly zero epistemic variance") {
  auto rng = RngStream::keyed({10});
  Trunk trunk = make_trunk(4, {6}, 0.0, rng);
  Head head = make_head(0, 6, {4}, LossMode::Nll, 0.0, rng);
  Prediction p = mcd_predict(trunk, head, make_fp({0.2f, 0.4f, 0.6f, 0.8f}), 8,
                             RngStream::keyed({11}));
  CHECK(p.epistemic_var_x == 0.0);
  CHECK(p.epistemic_var_y == 0.0);
  CHECK(p.var_x == doctest::Approx(p.aleatoric_var_x));
  CHECK(p.var_y == doctest::Approx(p.aleatoric_var_y));
}

TEST_CASE("MC-dropout variances never go negative") {
  auto rng = RngStream::keyed({12});
  for (int trial = 0; trial < 1000; ++trial) {
    auto net_rng = rng.substream(static_cast<std::uint64_t>(trial));
    Trunk trunk = make_trunk(4, {4}, 0.3, net_rng);
    Head head = make_head(0, 4, {3}, trial % 2 ? LossMode::Nll : LossMode::Mse, 0.3, net_rng);
    Fingerprint fp = make_fp({static_cast<float>(net_rng.next_unit()),
                              static_cast<float>(net_rng.next_unit()),
                              static_cast<float>(net_rng.next_unit()),
                              static_cast<float>(net_rng.next_unit())});
    Prediction p = mcd_predict(trunk, head, fp, 3, net_rng.substream(7));
    CHECK(p.epistemic_var_x >= 0.0);
    CHECK(p.epistemic_var_y >= 0.0);
    CHECK(p.var_x >= kVarianceFloor);
    CHECK(p.var_y >= kVarianceFloor);
  }
}

TEST_CASE("MC dropout requires at least one pass") {
  auto rng = RngStream::keyed({13});
  Trunk trunk = make_trunk(2, {3}, 0.1, rng);
  Head head = make_head(0, 3, {2}, LossMode::Mse, 0.1, rng);
  CHECK_THROWS_AS(mcd_predict(trunk, head, make_fp({0.5f, 0.5f}), 0, rng), DomainError);
}

TEST_CASE("inverted dropout preserves the expectation") {
  const int repeats = 10000;
  const Eigen::Index width = 64;
  const double rate = 0.3;
  auto rng = RngStream::keyed({14});
  double sum = 0.0;
  for (int i = 0; i < repeats; ++i) {
    Matrix ones = Matrix::Ones(1, width);
    apply_dropout(ones, rate, rng, nullptr);
    sum += ones.sum();
  }
  const double n = static_cast<double>(repeats) * static_cast<double>(width);
  double mean = sum / n;
  // element variance of inverted dropout on ones: 1/(1-rate) - 1
  double se = std::sqrt((1.0 / (1.0 - rate) - 1.0) / n);
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("gradients match finite differences on random small networks") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (LossMode mode : {LossMode::Mse, LossMode::Nll}) {
      for (std::size_t tasks : {std::size_t{1}, std::size_t{3}}) {
        gradcheck::TestNet net = gradcheck::make_random_net(seed * 100 + tasks, mode, tasks);
        REQUIRE(gradcheck::net_params(net).size() <= 200 * tasks);
        auto result = gradcheck::check(net);
        CHECK(result.p95 < 1e-4);
        CHECK(result.worst < 1e-3);
      }
    }
  }
}
