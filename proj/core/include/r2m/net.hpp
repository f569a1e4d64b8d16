#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "r2m/tensor.hpp"

namespace r2m {

/// Which heads the model trains and whether the gates are active.
///   r2mnet         - twin branches, gates on
///   r2mnet_no_agu  - twin branches, gates bypassed (identity)
///   mnet_only      - malignancy branch alone, single-task loss
enum class NetVariant { r2mnet, r2mnet_no_agu, mnet_only };

std::string to_string(NetVariant v);
NetVariant net_variant_from_string(const std::string& s);

struct ModelConfig {
  int input_size = 32;
  int stem_channels = 8;
  std::array<int, 4> block_channels{8, 16, 32, 64};
  int units_per_block = 1;
  int num_radiology_classes = 4;
  int num_malignancy_classes = 2;
  int se_reduction_ratio = 16;
  double loss_lambda = 0.5;
  NetVariant variant = NetVariant::r2mnet;

  void validate() const;

  /// Excitation bottleneck width at a stage; the reduction ratio is clamped
  /// so the bottleneck never collapses below one channel.
  int bottleneck(int stage) const;

  /// 32-cube preset used throughout the tests; trains in minutes on a CPU.
  static ModelConfig desk();
  /// 96-cube preset matching the published topology.
  static ModelConfig paper();
};

struct ConvLayer {
  Tensor weight;  // [C_out, C_in, k, k, k]
  Tensor bias;    // [C_out]
};

struct LinearLayer {
  Tensor weight;  // [G, F]
  Tensor bias;    // [G]
};

struct ResidualUnitParams {
  ConvLayer conv1, conv2;
};

struct ResidualBlockParams {
  std::optional<ConvLayer> projection;  // 1x1x1 entry conv when width changes
  std::vector<ResidualUnitParams> units;
};

/// Squeeze/excitation bottleneck pair: reduce is C -> C/r, expand is C/r -> C.
struct AguParams {
  LinearLayer reduce, expand;
};

struct BranchParams {
  ConvLayer stem1, stem2;
  std::array<ResidualBlockParams, 4> blocks;
  LinearLayer head;
};

struct R2MNetParams {
  ModelConfig config;
  BranchParams rnet;
  BranchParams mnet;
  std::array<AguParams, 4> agus;

  /// Kaiming fan-in initialization, deterministic per seed.
  static R2MNetParams init(const ModelConfig& cfg, std::uint64_t seed);
  static R2MNetParams zeros(const ModelConfig& cfg);

  /// Visits every tensor in a fixed order under a stable dotted name.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;

  /// Copy with every tensor registered as a leaf on `tape`.
  R2MNetParams tracked(Tape& tape) const;

  std::size_t tensor_count() const;
};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct AguState {
  Tensor descriptor;        // T, spatial means of the radiology features
  Tensor gate;              // S, per-channel sigmoid gate
  Tensor input_radiology;   // R
  Tensor input_malignancy;  // M
  Tensor output;            // gated malignancy features
};

/// Squeeze (GAP) -> bottleneck excitation -> channel-wise rescale of the
/// malignancy features. R and M must share [C,D,H,W].
std::pair<Tensor, AguState> agu_forward(const Tensor& radiology_features,
                                        const Tensor& malignancy_features,
                                        const AguParams& params);

/// y = relu(x + conv2(relu(conv1(x)))), shape-preserving.
Tensor residual_unit(const Tensor& x, const ResidualUnitParams& params);

struct BranchTrace {
  Tensor logits;
  std::array<Tensor, 4> block_features;  // residual block outputs, pre-pool
  std::array<Tensor, 4> stage_features;  // post-pool
  Tensor last_activation;                // == stage_features[3], feeds GAP
};

/// One branch: stem -> 4 x [block, pool] -> GAP -> head.
BranchTrace branch_forward(const Tensor& x, const BranchParams& params,
                           const ModelConfig& cfg);

/// Radiology branch pass; returns un-normalized logits plus the post-pool
/// stage features.
inline BranchTrace rnet_forward(const Tensor& x, const R2MNetParams& params) {
  return branch_forward(x, params.rnet, params.config);
}

struct ForwardTrace {
  Tensor radiology_logits;
  Tensor malignancy_logits;
  /// Radiology features consumed by the gates (block outputs, pre-pool).
  std::array<Tensor, 4> rnet_stage_features;
  /// Final malignancy feature map (post last pool), the default CDAM layer.
  Tensor mnet_last_activation;
  std::array<AguState, 4> agu_states;  // empty tensors when gates disabled
};

/// Full twin pass. Each malignancy stage is gated by the radiology feature
/// of the same stage before pooling; `gates_enabled = false` bypasses the
/// gates entirely (the no-AGU ablation).
ForwardTrace r2mnet_forward(const Tensor& x, const R2MNetParams& params,
                            bool gates_enabled = true);

/// lambda * CE(radiology) + (1 - lambda) * CE(malignancy).
Tensor multi_task_loss(const ForwardTrace& trace, std::int64_t y_radiology,
                       std::int64_t y_malignancy, double lambda);

// ---------------------------------------------------------------------------
// Symbolic shape trace (no tensor math)
// ---------------------------------------------------------------------------

struct StageShapes {
  Shape block_output;
  Shape stage_output;
};

struct NetShapes {
  Shape stem_output;
  std::array<StageShapes, 4> stages;
  Shape last_activation;
};

NetShapes trace_shapes(const ModelConfig& cfg);

}  // namespace r2m
