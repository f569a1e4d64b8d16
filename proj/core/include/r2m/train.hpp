#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "r2m/dataset.hpp"
#include "r2m/net.hpp"

namespace r2m {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments mirror the parameter tensors in R2MNetParams::for_each order.
struct AdamState {
  AdamConfig config;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  static AdamState init(const R2MNetParams& params, const AdamConfig& cfg);
};

/// Per-parameter gradients in for_each order; an empty slot means zero.
using ParamGradients = std::vector<std::vector<double>>;

/// Bias-corrected Adam update, in place.
void adam_step(R2MNetParams& params, const ParamGradients& grads,
               AdamState& state);

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 1e-3;
  /// Task weight; falls back to the model config's value when unset.
  std::optional<double> loss_lambda;
  int batch_size = 8;
  bool augment = true;
  std::uint64_t seed = 0;
  std::string preset = "desk";
  int threads = 1;
  /// Fraction held out for the post-training evaluation (CLI train).
  double holdout_fraction = 0.2;

  void validate() const;
  static TrainConfig desk();
  static TrainConfig paper();
};

/// Multi-task (or single-task, per the config's variant) loss gradient for
/// one sample, plus the loss value.
std::pair<ParamGradients, double> sample_gradient(const R2MNetParams& params,
                                                  const VolumeSample& sample,
                                                  double lambda);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

using EpochCallback =
    std::function<void(const EpochStats&, const R2MNetParams&)>;

struct TrainResult {
  R2MNetParams params;
  std::vector<EpochStats> trace;
};

/// Seeded shuffled epochs with optional augmentation, gradient accumulation
/// over `batch_size` samples, one Adam step per batch. Fully deterministic
/// for a fixed (seed, dataset, config).
TrainResult train(const std::vector<VolumeSample>& dataset,
                  const ModelConfig& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace r2m
