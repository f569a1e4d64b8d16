#include "r2m/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "r2m/augment.hpp"
#include "r2m/parallel.hpp"
#include "r2m/rng.hpp"

namespace r2m {

AdamState AdamState::init(const R2MNetParams& params, const AdamConfig& cfg) {
  AdamState state;
  state.config = cfg;
  params.for_each([&state](const std::string&, const Tensor& t) {
    state.m.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    state.v.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
  });
  return state;
}

void adam_step(R2MNetParams& params, const ParamGradients& grads,
               AdamState& state) {
  if (grads.size() != state.m.size()) {
    throw ValidationError("adam_step: gradient count " +
                          std::to_string(grads.size()) +
                          " does not match state (" +
                          std::to_string(state.m.size()) + ")");
  }
  state.step_count += 1;
  const auto& cfg = state.config;
  const double mc = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double vc = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != static_cast<std::size_t>(t.numel())) {
      throw ValidationError("adam_step: moment shape mismatch for " + name);
    }
    const std::vector<double>* g = &grads[i];
    if (!g->empty() && g->size() != m.size()) {
      throw ValidationError("adam_step: gradient shape mismatch for " + name);
    }
    std::vector<double> updated(t.data());
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = g->empty() ? 0.0 : (*g)[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / mc;
      const double vhat = v[j] / vc;
      updated[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
    t = Tensor::from(std::move(updated), t.shape());
    ++i;
  });
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) {
    throw ValidationError("train: learning_rate must be >= 0");
  }
  if (loss_lambda && !(*loss_lambda >= 0.0 && *loss_lambda <= 1.0)) {
    throw ValidationError("train: loss_lambda must lie in [0,1]");
  }
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("train: holdout_fraction must lie in (0,1)");
  }
  if (threads < 0) throw ValidationError("train: threads must be >= 0");
}

TrainConfig TrainConfig::desk() { return {}; }

TrainConfig TrainConfig::paper() {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 8;
  cfg.preset = "paper";
  return cfg;
}

std::pair<ParamGradients, double> sample_gradient(const R2MNetParams& params,
                                                  const VolumeSample& sample,
                                                  double lambda) {
  Tape tape;
  R2MNetParams tracked = params.tracked(tape);
  const Tensor x = sample.to_tensor();
  Tensor loss;
  switch (params.config.variant) {
    case NetVariant::r2mnet:
    case NetVariant::r2mnet_no_agu: {
      const bool gates = params.config.variant == NetVariant::r2mnet;
      ForwardTrace trace = r2mnet_forward(x, tracked, gates);
      loss = multi_task_loss(trace, static_cast<std::int64_t>(sample.radiology_label),
                             static_cast<std::int64_t>(sample.malignancy_label),
                             lambda);
      break;
    }
    case NetVariant::mnet_only: {
      BranchTrace trace = branch_forward(x, tracked.mnet, tracked.config);
      loss = cross_entropy(trace.logits,
                           static_cast<std::int64_t>(sample.malignancy_label));
      break;
    }
  }
  tape.backward(loss);
  ParamGradients grads;
  grads.reserve(params.tensor_count());
  tracked.for_each([&](const std::string&, Tensor& t) {
    if (tape.has_gradient(t)) {
      grads.push_back(tape.gradient(t).data());
    } else {
      grads.emplace_back();
    }
  });
  return {std::move(grads), loss.value()};
}

TrainResult train(const std::vector<VolumeSample>& dataset,
                  const ModelConfig& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  model.validate();
  cfg.validate();
  if (dataset.empty()) throw ValidationError("train: dataset is empty");
  bool have[2] = {false, false};
  for (const auto& s : dataset) {
    s.validate(model.input_size);
    have[static_cast<std::size_t>(s.malignancy_label)] = true;
  }
  if (!have[0] || !have[1]) {
    throw ValidationError("train: both malignancy classes must be present");
  }
  const double lambda = cfg.loss_lambda.value_or(model.loss_lambda);

  TrainResult result;
  result.params = R2MNetParams::init(model, mix_seed(cfg.seed, 1));
  AdamState adam = AdamState::init(result.params, AdamConfig{cfg.learning_rate});
  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  Rng augment_rng(mix_seed(cfg.seed, 3));
  const int threads = cfg.threads == 0 ? hardware_threads() : cfg.threads;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batch_size), order.size() - b0);

      // Augmentation draws happen up front in sample order so that the
      // random stream is independent of the worker schedule.
      std::vector<VolumeSample> batch(count);
      for (std::size_t j = 0; j < count; ++j) {
        const auto& s = dataset[order[b0 + j]];
        batch[j] = cfg.augment ? augment(s, augment_rng) : s;
      }

      std::vector<ParamGradients> slots(count);
      std::vector<double> losses(count, 0.0);
      parallel_for(count, threads, [&](std::size_t j) {
        auto [g, l] = sample_gradient(result.params, batch[j], lambda);
        slots[j] = std::move(g);
        losses[j] = l;
      });

      ParamGradients batch_grads(adam.m.size());
      for (std::size_t j = 0; j < count; ++j) {
        loss_sum += losses[j];
        for (std::size_t i = 0; i < slots[j].size(); ++i) {
          if (slots[j][i].empty()) continue;
          auto& acc = batch_grads[i];
          if (acc.empty()) acc.assign(slots[j][i].size(), 0.0);
          for (std::size_t v = 0; v < acc.size(); ++v) acc[v] += slots[j][i][v];
        }
        slots[j].clear();
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& g : batch_grads) {
        for (auto& v : g) v *= inv;
      }
      adam_step(result.params, batch_grads, adam);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(dataset.size()),
                     cfg.learning_rate};
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats, result.params);
  }
  return result;
}

}  // namespace r2m
