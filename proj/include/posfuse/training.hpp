#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posfuse/dataset.hpp"
#include "posfuse/fusion.hpp"
#include "posfuse/nn.hpp"

namespace posfuse {

enum class TrainMode : std::uint8_t { Early = 0, Stl = 1, Mtl = 2 };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);
std::string loss_mode_name(LossMode m);
LossMode loss_mode_from_name(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::Mtl;
  LossMode loss = LossMode::Nll;
  std::uint32_t epochs = 200;  // desk-scale default; the full schedule is 1000
  std::uint32_t batch_size = 64;
  double lr_initial = 1e-3;
  double lr_reduced = 1e-4;
  std::uint32_t patience = 100;  // epochs without validation improvement
  std::uint64_t seed = 1;
  std::vector<std::uint32_t> trunk_layers = {128, 128};
  std::vector<std::uint32_t> head_layers = {64, 64};
  double dropout = 0.1;

  void validate() const;  // throws ConfigError
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::string& path);
};

/// One-time learning-rate reduction after `patience` consecutive epochs
/// without strict validation improvement.
class PlateauSchedule {
 public:
  PlateauSchedule(double initial_lr, double reduced_lr, std::uint32_t patience)
      : lr_(initial_lr), reduced_lr_(reduced_lr), patience_(patience) {}

  double lr() const { return lr_; }
  bool improved_last() const { return stale_ == 0; }

  /// Feed one epoch's validation loss; returns true when this observation
  /// triggers the reduction.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      stale_ = 0;
      return false;
    }
    ++stale_;
    if (!reduced_ && stale_ >= patience_) {
      lr_ = reduced_lr_;
      reduced_ = true;
      return true;
    }
    return false;
  }

 private:
  double lr_;
  double reduced_lr_;
  std::uint32_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::uint32_t stale_ = 0;
  bool reduced_ = false;
};

struct EpochRecord {
  std::uint32_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct ModelHistory {
  std::uint32_t anchor_id = 0;  // meaningful for STL; 0 for early/MTL
  std::vector<EpochRecord> epochs;
  double best_val_loss = 0.0;
  std::uint32_t best_epoch = 0;
};

std::string history_to_csv(const ModelHistory& history);

struct ModelBundle {
  TrainMode mode = TrainMode::Mtl;
  LossMode loss = LossMode::Nll;
  std::uint32_t n_anchors = 0;   // anchors of the training dataset
  std::uint32_t input_dim = 0;   // per-model input width
  std::vector<Trunk> trunks;     // early/MTL: one; STL: one per anchor
  std::vector<Head> heads;       // early: one; STL/MTL: one per anchor
  std::vector<ModelHistory> histories;
  std::vector<AdamState> optimizer_states;  // optional, parallel to models

  std::size_t parameter_count() const;
  double best_validation_loss() const;  // summed over independently trained models

  void save(const std::string& path, bool include_optimizer_state = false) const;
  static ModelBundle load(const std::string& path);
  std::vector<std::byte> serialize(bool include_optimizer_state = false) const;
  static ModelBundle deserialize(const std::vector<std::byte>& bytes);
};

/// Trains per the configured regime on the dataset's train split, tracking
/// the validation split every epoch; the best-validation parameters are
/// retained. Throws NumericError on NaN loss (message carries the last
/// completed epoch) and ConfigError on mode/dataset mismatch.
ModelBundle train(const Dataset& dataset, const TrainConfig& cfg);

/// Per-anchor MC-dropout estimates (late modes) or a single estimate over
/// the concatenated fingerprint (early mode). MSE-trained bundles report
/// epistemic-only variance.
std::vector<UncertainEstimate> predict_all(const ModelBundle& bundle, const Sample& sample,
                                           std::uint32_t passes, RngStream rng);

}  // namespace posfuse
