#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posfuse/common.hpp"
#include "posfuse/dataset.hpp"
#include "posfuse/rng.hpp"

namespace posfuse {

using Matrix = Eigen::MatrixXd;  // batches are row-major logically: one sample per row
using Vector = Eigen::VectorXd;

inline constexpr double kVarianceFloor = 1e-12;

enum class LossMode : std::uint8_t { Mse = 0, Nll = 1 };

inline std::uint32_t output_arity(LossMode mode) {
  return mode == LossMode::Mse ? 2u : 4u;
}

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  double dropout = 0.0;

  std::uint32_t in_dim() const { return static_cast<std::uint32_t>(weights.cols()); }
  std::uint32_t out_dim() const { return static_cast<std::uint32_t>(weights.rows()); }
};

/// Dense stack. Hidden layers apply ReLU then inverted dropout; when
/// final_linear is set the last layer is a plain affine output.
struct Mlp {
  std::vector<DenseLayer> layers;
  bool final_linear = false;

  std::uint32_t in_dim() const { return layers.front().in_dim(); }
  std::uint32_t out_dim() const { return layers.back().out_dim(); }
  std::size_t parameter_count() const;
};

/// Shared feature extractor; every layer is a hidden layer.
struct Trunk {
  Mlp mlp;
};

/// Per-anchor regression head; ends in 2 (position) or 4
/// (position + per-coordinate log-variance) linear outputs.
struct Head {
  std::uint32_t anchor_id = 0;
  Mlp mlp;
};

/// Fan-in-scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Mlp make_mlp(std::uint32_t input_dim, const std::vector<std::uint32_t>& hidden,
             std::uint32_t output_dim, bool final_linear, double dropout,
             RngStream& rng);

Trunk make_trunk(std::uint32_t input_dim, const std::vector<std::uint32_t>& widths,
                 double dropout, RngStream& rng);
Head make_head(std::uint32_t anchor_id, std::uint32_t input_dim,
               const std::vector<std::uint32_t>& hidden, LossMode mode,
               double dropout, RngStream& rng);

/// Inverted dropout on activations: kept entries scale by 1/(1-rate).
void apply_dropout(Matrix& activations, double rate, RngStream& rng, Matrix* mask_out);

struct MlpCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // layer output (after ReLU/dropout where applied)
  std::vector<Matrix> mask;  // dropout masks; empty matrix when inactive
};

struct MlpGrads {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_bias;

  static MlpGrads zeros_like(const Mlp& mlp);
  void add(const MlpGrads& other);
};

Matrix mlp_forward(const Mlp& mlp, const Matrix& batch, bool dropout_active,
                   RngStream* rng, MlpCache* cache);

/// Backpropagates d_out through the cached forward pass; accumulates into
/// grads and returns the gradient w.r.t. the batch input.
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& d_out,
                    MlpGrads& grads);

/// Trunk + head forward for a batch of flattened fingerprints.
Matrix forward_batch(const Trunk& trunk, const Head& head, const Matrix& batch,
                     bool dropout_active, RngStream* rng, MlpCache* trunk_cache,
                     MlpCache* head_cache);

/// Single-fingerprint forward; throws DomainError on shape mismatch.
Vector forward(const Trunk& trunk, const Head& head, const Fingerprint& fp,
               bool dropout_active, RngStream* rng);

Matrix fingerprint_row(const Fingerprint& fp);

struct LossGrad {
  double loss = 0.0;
  Matrix d_out;  // gradient w.r.t. raw network outputs
};

/// Mean over the batch of squared per-coordinate errors, summed over x and y.
LossGrad mse_loss(const Matrix& out, const Matrix& labels);

/// Heteroscedastic Gaussian negative log-likelihood with log-variance
/// outputs s = log(sigma^2): per sample
/// e_x^2 exp(-s_x)/2 + e_y^2 exp(-s_y)/2 + (s_x + s_y)/2, batch-averaged.
LossGrad nll_loss(const Matrix& out, const Matrix& labels);

LossGrad loss_for(LossMode mode, const Matrix& out, const Matrix& labels);

struct MtlLoss {
  double total = 0.0;
  std::vector<Matrix> d_outs;  // one gradient block per anchor
};

/// Unweighted sum over anchors of the per-anchor loss on a shared
/// mini-batch. Throws DomainError when outs/labels counts mismatch.
MtlLoss mtl_loss(const std::vector<Matrix>& outs, const std::vector<Matrix>& labels,
                 LossMode mode);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(std::size_t n, double lr);
};

/// Standard Adam update with bias correction. Throws NumericError on a
/// non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

// Flat parameter views in layer order, weights (row-major) then bias.
std::vector<double> get_params(const Mlp& mlp);
void set_params(Mlp& mlp, std::span<const double> params);
void append_params(const Mlp& mlp, std::vector<double>& out);
std::size_t read_params(Mlp& mlp, std::span<const double> params);
void append_grads(const MlpGrads& grads, std::vector<double>& out);

struct Prediction {
  double x = 0.0, y = 0.0;
  double aleatoric_var_x = 0.0, aleatoric_var_y = 0.0;
  double epistemic_var_x = 0.0, epistemic_var_y = 0.0;
  double var_x = kVarianceFloor, var_y = kVarianceFloor;  // combined, floored
};

/// Variance combination over T stochastic passes: epistemic = population
/// variance of the per-pass positions, aleatoric = mean of exp(s) (zero in
/// position-only mode), combined = epistemic + aleatoric.
Prediction combine_mcd_passes(const Matrix& pass_outputs, LossMode mode);

/// T forward passes with dropout active (pass t uses rng.substream(t)).
Prediction mcd_predict(const Trunk& trunk, const Head& head, const Fingerprint& fp,
                       std::uint32_t passes, RngStream rng);

}  // namespace posfuse
