#include "posfuse/nn.hpp"

#include <cmath>

namespace posfuse {

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    n += static_cast<std::size_t>(layer.weights.size()) + static_cast<std::size_t>(layer.bias.size());
  return n;
}

namespace {

DenseLayer init_layer(std::uint32_t in, std::uint32_t out, double dropout, RngStream& rng) {
  DenseLayer layer;
  layer.weights.resize(out, in);
  layer.bias.resize(out);
  layer.dropout = dropout;
  const double limit = 1.0 / std::sqrt(static_cast<double>(in));
  for (std::uint32_t r = 0; r < out; ++r)
    for (std::uint32_t c = 0; c < in; ++c)
      layer.weights(r, c) = rng.next_uniform(-limit, limit);
  for (std::uint32_t r = 0; r < out; ++r) layer.bias(r) = rng.next_uniform(-limit, limit);
  return layer;
}

inline bool is_hidden(const Mlp& mlp, std::size_t layer_index) {
  return !mlp.final_linear || layer_index + 1 < mlp.layers.size();
}

}  // namespace

Mlp make_mlp(std::uint32_t input_dim, const std::vector<std::uint32_t>& hidden,
             std::uint32_t output_dim, bool final_linear, double dropout, RngStream& rng) {
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  Mlp mlp;
  mlp.final_linear = final_linear;
  std::uint32_t prev = input_dim;
  for (auto width : hidden) {
    mlp.layers.push_back(init_layer(prev, width, dropout, rng));
    prev = width;
  }
  mlp.layers.push_back(init_layer(prev, output_dim, final_linear ? 0.0 : dropout, rng));
  return mlp;
}

Trunk make_trunk(std::uint32_t input_dim, const std::vector<std::uint32_t>& widths,
                 double dropout, RngStream& rng) {
  if (widths.empty()) throw ConfigError("trunk needs at least one layer");
  std::vector<std::uint32_t> hidden(widths.begin(), widths.end() - 1);
  return Trunk{make_mlp(input_dim, hidden, widths.back(), /*final_linear=*/false, dropout, rng)};
}

Head make_head(std::uint32_t anchor_id, std::uint32_t input_dim,
               const std::vector<std::uint32_t>& hidden, LossMode mode, double dropout,
               RngStream& rng) {
  return Head{anchor_id,
              make_mlp(input_dim, hidden, output_arity(mode), /*final_linear=*/true, dropout, rng)};
}

void apply_dropout(Matrix& activations, double rate, RngStream& rng, Matrix* mask_out) {
  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(activations.rows(), activations.cols());
  for (Eigen::Index r = 0; r < activations.rows(); ++r)
    for (Eigen::Index c = 0; c < activations.cols(); ++c)
      mask(r, c) = rng.next_unit() >= rate ? scale : 0.0;
  activations.array() *= mask.array();
  if (mask_out) *mask_out = std::move(mask);
}

Matrix mlp_forward(const Mlp& mlp, const Matrix& batch, bool dropout_active, RngStream* rng,
                   MlpCache* cache) {
  if (batch.cols() != mlp.in_dim())
    throw DomainError("input width does not match network input dimension");
  if (cache) {
    cache->input = batch;
    cache->pre.assign(mlp.layers.size(), Matrix());
    cache->post.assign(mlp.layers.size(), Matrix());
    cache->mask.assign(mlp.layers.size(), Matrix());
  }
  Matrix a = batch;
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const DenseLayer& layer = mlp.layers[k];
    Matrix z = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) cache->pre[k] = z;
    if (is_hidden(mlp, k)) {
      a = z.cwiseMax(0.0);
      if (dropout_active && layer.dropout > 0.0) {
        if (!rng) throw DomainError("dropout requested without an RNG stream");
        apply_dropout(a, layer.dropout, *rng, cache ? &cache->mask[k] : nullptr);
      }
    } else {
      a = std::move(z);
    }
    if (cache) cache->post[k] = a;
  }
  return a;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& d_out, MlpGrads& grads) {
  Matrix g = d_out;
  for (std::size_t k = mlp.layers.size(); k-- > 0;) {
    const DenseLayer& layer = mlp.layers[k];
    Matrix dz;
    if (is_hidden(mlp, k)) {
      dz = g;
      if (cache.mask[k].size() > 0) dz.array() *= cache.mask[k].array();
      dz.array() *= (cache.pre[k].array() > 0.0).cast<double>();
    } else {
      dz = g;
    }
    const Matrix& below = k == 0 ? cache.input : cache.post[k - 1];
    grads.d_weights[k].noalias() += dz.transpose() * below;
    grads.d_bias[k].noalias() += dz.colwise().sum().transpose();
    g = dz * layer.weights;
  }
  return g;
}

MlpGrads MlpGrads::zeros_like(const Mlp& mlp) {
  MlpGrads g;
  g.d_weights.reserve(mlp.layers.size());
  g.d_bias.reserve(mlp.layers.size());
  for (const auto& layer : mlp.layers) {
    g.d_weights.push_back(Matrix::Zero(layer.weights.rows(), layer.weights.cols()));
    g.d_bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return g;
}

void MlpGrads::add(const MlpGrads& other) {
  for (std::size_t k = 0; k < d_weights.size(); ++k) {
    d_weights[k] += other.d_weights[k];
    d_bias[k] += other.d_bias[k];
  }
}

Matrix forward_batch(const Trunk& trunk, const Head& head, const Matrix& batch,
                     bool dropout_active, RngStream* rng, MlpCache* trunk_cache,
                     MlpCache* head_cache) {
  Matrix features = mlp_forward(trunk.mlp, batch, dropout_active, rng, trunk_cache);
  return mlp_forward(head.mlp, features, dropout_active, rng, head_cache);
}

Matrix fingerprint_row(const Fingerprint& fp) {
  Matrix row(1, fp.data.size());
  for (std::size_t i = 0; i < fp.data.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = fp.data[i];
  return row;
}

Vector forward(const Trunk& trunk, const Head& head, const Fingerprint& fp, bool dropout_active,
               RngStream* rng) {
  if (fp.data.size() != trunk.mlp.in_dim())
    throw DomainError("fingerprint size does not match trunk input dimension");
  Matrix out = forward_batch(trunk, head, fingerprint_row(fp), dropout_active, rng, nullptr, nullptr);
  return out.row(0).transpose();
}

LossGrad mse_loss(const Matrix& out, const Matrix& labels) {
  if (out.cols() != 2) throw DomainError("MSE loss expects 2 outputs per sample");
  if (labels.cols() != 2 || labels.rows() != out.rows())
    throw DomainError("labels shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(out.rows());
  Matrix err = out - labels;
  LossGrad lg;
  lg.loss = err.squaredNorm() * inv_n;
  lg.d_out = 2.0 * inv_n * err;
  return lg;
}

LossGrad nll_loss(const Matrix& out, const Matrix& labels) {
  if (out.cols() != 4) throw DomainError("NLL loss expects 4 outputs per sample");
  if (labels.cols() != 2 || labels.rows() != out.rows())
    throw DomainError("labels shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(out.rows());
  LossGrad lg;
  lg.d_out = Matrix::Zero(out.rows(), 4);
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (int c = 0; c < 2; ++c) {
      double err = out(i, c) - labels(i, c);
      double s = out(i, c + 2);
      double inv_var = std::exp(-s);
      total += 0.5 * err * err * inv_var + 0.5 * s;
      lg.d_out(i, c) = err * inv_var * inv_n;
      lg.d_out(i, c + 2) = 0.5 * (1.0 - err * err * inv_var) * inv_n;
    }
  }
  lg.loss = total * inv_n;
  return lg;
}

LossGrad loss_for(LossMode mode, const Matrix& out, const Matrix& labels) {
  return mode == LossMode::Mse ? mse_loss(out, labels) : nll_loss(out, labels);
}

MtlLoss mtl_loss(const std::vector<Matrix>& outs, const std::vector<Matrix>& labels,
                 LossMode mode) {
  if (outs.empty() || outs.size() != labels.size())
    throw DomainError("per-anchor outputs and labels must match and be nonempty");
  MtlLoss result;
  result.d_outs.reserve(outs.size());
  for (std::size_t n = 0; n < outs.size(); ++n) {
    LossGrad lg = loss_for(mode, outs[n], labels[n]);
    result.total += lg.loss;
    result.d_outs.push_back(std::move(lg.d_out));
  }
  return result;
}

AdamState AdamState::for_size(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DomainError("parameter/gradient/state sizes disagree");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient in optimizer step");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    double m_hat = state.m[i] / bc1;
    double v_hat = state.v[i] / bc2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void append_params(const Mlp& mlp, std::vector<double>& out) {
  for (const auto& layer : mlp.layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) out.push_back(layer.weights(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) out.push_back(layer.bias(r));
  }
}

std::vector<double> get_params(const Mlp& mlp) {
  std::vector<double> out;
  out.reserve(mlp.parameter_count());
  append_params(mlp, out);
  return out;
}

std::size_t read_params(Mlp& mlp, std::span<const double> params) {
  std::size_t pos = 0;
  for (auto& layer : mlp.layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = params[pos++];
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = params[pos++];
  }
  return pos;
}

void set_params(Mlp& mlp, std::span<const double> params) {
  if (params.size() != mlp.parameter_count())
    throw DomainError("parameter vector size mismatch");
  read_params(mlp, params);
}

void append_grads(const MlpGrads& grads, std::vector<double>& out) {
  for (std::size_t k = 0; k < grads.d_weights.size(); ++k) {
    const Matrix& w = grads.d_weights[k];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(w(r, c));
    const Vector& b = grads.d_bias[k];
    for (Eigen::Index r = 0; r < b.size(); ++r) out.push_back(b(r));
  }
}

Prediction combine_mcd_passes(const Matrix& pass_outputs, LossMode mode) {
  if (pass_outputs.rows() < 1) throw DomainError("need at least one MC pass");
  Prediction p;
  p.x = pass_outputs.col(0).mean();
  p.y = pass_outputs.col(1).mean();
  double mean_x2 = pass_outputs.col(0).array().square().mean();
  double mean_y2 = pass_outputs.col(1).array().square().mean();
  p.epistemic_var_x = std::max(0.0, mean_x2 - p.x * p.x);
  p.epistemic_var_y = std::max(0.0, mean_y2 - p.y * p.y);
  if (mode == LossMode::Nll) {
    p.aleatoric_var_x = pass_outputs.col(2).array().exp().mean();
    p.aleatoric_var_y = pass_outputs.col(3).array().exp().mean();
  }
  p.var_x = std::max(p.epistemic_var_x + p.aleatoric_var_x, kVarianceFloor);
  p.var_y = std::max(p.epistemic_var_y + p.aleatoric_var_y, kVarianceFloor);
  return p;
}

namespace {

/// Forward for MC dropout: row r of the batch uses its own stream, so pass
/// results do not depend on evaluation order.
Matrix mlp_forward_rowwise_dropout(const Mlp& mlp, Matrix a, std::vector<RngStream>& row_streams) {
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const DenseLayer& layer = mlp.layers[k];
    Matrix z = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    if (is_hidden(mlp, k)) {
      a = z.cwiseMax(0.0);
      if (layer.dropout > 0.0) {
        const double rate = layer.dropout;
        const double scale = 1.0 / (1.0 - rate);
        for (Eigen::Index r = 0; r < a.rows(); ++r)
          for (Eigen::Index c = 0; c < a.cols(); ++c)
            a(r, c) *= row_streams[static_cast<std::size_t>(r)].next_unit() >= rate ? scale : 0.0;
      }
    } else {
      a = std::move(z);
    }
  }
  return a;
}

}  // namespace

Prediction mcd_predict(const Trunk& trunk, const Head& head, const Fingerprint& fp,
                       std::uint32_t passes, RngStream rng) {
  if (passes < 1) throw DomainError("MC dropout needs at least one pass");
  if (fp.data.size() != trunk.mlp.in_dim())
    throw DomainError("fingerprint size does not match trunk input dimension");
  Matrix row = fingerprint_row(fp);
  Matrix batch(passes, row.cols());
  for (std::uint32_t t = 0; t < passes; ++t) batch.row(t) = row.row(0);
  std::vector<RngStream> row_streams;
  row_streams.reserve(passes);
  for (std::uint32_t t = 0; t < passes; ++t) row_streams.push_back(rng.substream(t));
  Matrix features = mlp_forward_rowwise_dropout(trunk.mlp, std::move(batch), row_streams);
  Matrix out = mlp_forward_rowwise_dropout(head.mlp, std::move(features), row_streams);
  LossMode mode = out.cols() == 4 ? LossMode::Nll : LossMode::Mse;
  return combine_mcd_passes(out, mode);
}

}  // namespace posfuse
