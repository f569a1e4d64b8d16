#include "r2m/net.hpp"

#include <cmath>

#include "r2m/rng.hpp"

namespace r2m {

std::string to_string(NetVariant v) {
  switch (v) {
    case NetVariant::r2mnet: return "r2mnet";
    case NetVariant::r2mnet_no_agu: return "r2mnet_no_agu";
    case NetVariant::mnet_only: return "mnet_only";
  }
  throw ValidationError("unknown net variant");
}

NetVariant net_variant_from_string(const std::string& s) {
  if (s == "r2mnet") return NetVariant::r2mnet;
  if (s == "r2mnet_no_agu") return NetVariant::r2mnet_no_agu;
  if (s == "mnet_only") return NetVariant::mnet_only;
  throw ValidationError("unknown net variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_size < 16 || input_size % 16 != 0) {
    throw ValidationError("config: input_size " + std::to_string(input_size) +
                          " must be a positive multiple of 16 (four pooling stages)");
  }
  if (stem_channels < 1) {
    throw ValidationError("config: stem_channels must be >= 1");
  }
  for (int i = 0; i < 4; ++i) {
    if (block_channels[static_cast<std::size_t>(i)] < 1) {
      throw ValidationError("config: block_channels[" + std::to_string(i) +
                            "] must be >= 1");
    }
  }
  if (units_per_block < 1) {
    throw ValidationError("config: units_per_block must be >= 1");
  }
  if (num_radiology_classes < 2 || num_malignancy_classes < 2) {
    throw ValidationError("config: class counts must be >= 2");
  }
  if (se_reduction_ratio < 1) {
    throw ValidationError("config: se_reduction_ratio must be >= 1");
  }
  if (block_channels[3] / se_reduction_ratio < 1) {
    throw ValidationError(
        "config: block_channels[3] / se_reduction_ratio must be >= 1 "
        "(degenerate excitation bottleneck)");
  }
  if (!(loss_lambda >= 0.0 && loss_lambda <= 1.0)) {
    throw ValidationError("config: loss_lambda must lie in [0,1]");
  }
}

int ModelConfig::bottleneck(int stage) const {
  const int c = block_channels[static_cast<std::size_t>(stage)];
  return std::max(1, c / se_reduction_ratio);
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.stem_channels = 8;
  cfg.block_channels = {8, 16, 32, 64};
  cfg.units_per_block = 1;
  return cfg;
}

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.input_size = 96;
  cfg.stem_channels = 32;
  cfg.block_channels = {32, 64, 128, 256};
  cfg.units_per_block = 3;
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameter construction and traversal
// ---------------------------------------------------------------------------

namespace {

Tensor init_tensor(Shape shape, double stddev, Rng* rng) {
  if (!rng) return Tensor::zeros(std::move(shape));
  std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : d) v = rng->normal(0.0, stddev);
  return Tensor::from(std::move(d), std::move(shape));
}

ConvLayer make_conv(int c_out, int c_in, int k, Rng* rng) {
  const double fan_in = static_cast<double>(c_in) * k * k * k;
  ConvLayer layer;
  layer.weight = init_tensor({c_out, c_in, k, k, k}, std::sqrt(2.0 / fan_in), rng);
  layer.bias = Tensor::zeros({c_out});
  return layer;
}

LinearLayer make_linear(int g, int f, Rng* rng) {
  LinearLayer layer;
  layer.weight = init_tensor({g, f}, std::sqrt(2.0 / static_cast<double>(f)), rng);
  layer.bias = Tensor::zeros({g});
  return layer;
}

BranchParams make_branch(const ModelConfig& cfg, int head_classes, Rng* rng) {
  BranchParams p;
  p.stem1 = make_conv(cfg.stem_channels, 1, 3, rng);
  p.stem2 = make_conv(cfg.stem_channels, cfg.stem_channels, 3, rng);
  int in_c = cfg.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const int c = cfg.block_channels[static_cast<std::size_t>(s)];
    ResidualBlockParams block;
    if (in_c != c) block.projection = make_conv(c, in_c, 1, rng);
    block.units.reserve(static_cast<std::size_t>(cfg.units_per_block));
    for (int u = 0; u < cfg.units_per_block; ++u) {
      block.units.push_back({make_conv(c, c, 3, rng), make_conv(c, c, 3, rng)});
    }
    p.blocks[static_cast<std::size_t>(s)] = std::move(block);
    in_c = c;
  }
  p.head = make_linear(head_classes, cfg.block_channels[3], rng);
  return p;
}

R2MNetParams make_params(const ModelConfig& cfg, Rng* rng) {
  cfg.validate();
  R2MNetParams p;
  p.config = cfg;
  p.rnet = make_branch(cfg, cfg.num_radiology_classes, rng);
  p.mnet = make_branch(cfg, cfg.num_malignancy_classes, rng);
  for (int s = 0; s < 4; ++s) {
    const int c = cfg.block_channels[static_cast<std::size_t>(s)];
    const int mid = cfg.bottleneck(s);
    p.agus[static_cast<std::size_t>(s)] = {make_linear(mid, c, rng),
                                           make_linear(c, mid, rng)};
  }
  return p;
}

void visit_conv(const std::string& name, ConvLayer& c,
                const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(name + ".weight", c.weight);
  fn(name + ".bias", c.bias);
}

void visit_linear(const std::string& name, LinearLayer& l,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(name + ".weight", l.weight);
  fn(name + ".bias", l.bias);
}

void visit_branch(const std::string& prefix, BranchParams& b,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_conv(prefix + ".stem1", b.stem1, fn);
  visit_conv(prefix + ".stem2", b.stem2, fn);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string bp = prefix + ".block" + std::to_string(s);
    auto& block = b.blocks[s];
    if (block.projection) visit_conv(bp + ".proj", *block.projection, fn);
    for (std::size_t u = 0; u < block.units.size(); ++u) {
      const std::string up = bp + ".unit" + std::to_string(u);
      visit_conv(up + ".conv1", block.units[u].conv1, fn);
      visit_conv(up + ".conv2", block.units[u].conv2, fn);
    }
  }
  visit_linear(prefix + ".head", b.head, fn);
}

}  // namespace

R2MNetParams R2MNetParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x52324d /* "R2M" */));
  return make_params(cfg, &rng);
}

R2MNetParams R2MNetParams::zeros(const ModelConfig& cfg) {
  return make_params(cfg, nullptr);
}

void R2MNetParams::for_each(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_branch("rnet", rnet, fn);
  visit_branch("mnet", mnet, fn);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string ap = "agu" + std::to_string(s);
    visit_linear(ap + ".reduce", agus[s].reduce, fn);
    visit_linear(ap + ".expand", agus[s].expand, fn);
  }
}

void R2MNetParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<R2MNetParams*>(this)->for_each(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

R2MNetParams R2MNetParams::tracked(Tape& tape) const {
  R2MNetParams copy = *this;
  copy.for_each([&tape](const std::string&, Tensor& t) { t = tape.leaf(t); });
  return copy;
}

std::size_t R2MNetParams::tensor_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor&) { ++n; });
  return n;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

std::pair<Tensor, AguState> agu_forward(const Tensor& radiology_features,
                                        const Tensor& malignancy_features,
                                        const AguParams& params) {
  if (radiology_features.shape() != malignancy_features.shape()) {
    throw ValidationError(
        "agu_forward: branch features disagree, radiology " +
        shape_str(radiology_features.shape()) + " vs malignancy " +
        shape_str(malignancy_features.shape()));
  }
  Tensor descriptor = global_avg_pool(radiology_features);
  Tensor hidden = relu(linear(descriptor, params.reduce.weight, params.reduce.bias));
  Tensor gate = sigmoid(linear(hidden, params.expand.weight, params.expand.bias));
  Tensor out = channel_scale(malignancy_features, gate);
  AguState state{descriptor, gate, radiology_features, malignancy_features, out};
  return {out, std::move(state)};
}

Tensor residual_unit(const Tensor& x, const ResidualUnitParams& params) {
  Tensor f = conv3d(relu(conv3d(x, params.conv1.weight, params.conv1.bias, 1, 1)),
                    params.conv2.weight, params.conv2.bias, 1, 1);
  return relu(add(x, f));
}

namespace {

Tensor block_forward(const Tensor& x, const ResidualBlockParams& block) {
  Tensor y = x;
  if (block.projection) {
    y = conv3d(y, block.projection->weight, block.projection->bias, 1, 0);
  }
  for (const auto& unit : block.units) y = residual_unit(y, unit);
  return y;
}

void check_input(const Tensor& x, const ModelConfig& cfg) {
  const std::int64_t s = cfg.input_size;
  const Shape expected{1, s, s, s};
  if (x.shape() != expected) {
    throw ValidationError("forward: input shape " + shape_str(x.shape()) +
                          " does not match configured " + shape_str(expected));
  }
}

Tensor stem_forward(const Tensor& x, const BranchParams& p) {
  Tensor y = relu(conv3d(x, p.stem1.weight, p.stem1.bias, 1, 1));
  return relu(conv3d(y, p.stem2.weight, p.stem2.bias, 1, 1));
}

}  // namespace

BranchTrace branch_forward(const Tensor& x, const BranchParams& params,
                           const ModelConfig& cfg) {
  check_input(x, cfg);
  BranchTrace trace;
  Tensor y = stem_forward(x, params);
  for (std::size_t s = 0; s < 4; ++s) {
    y = block_forward(y, params.blocks[s]);
    trace.block_features[s] = y;
    y = maxpool3d(y, 2, 2);
    trace.stage_features[s] = y;
  }
  trace.last_activation = y;
  Tensor pooled = global_avg_pool(y);
  trace.logits = linear(pooled, params.head.weight, params.head.bias);
  return trace;
}

ForwardTrace r2mnet_forward(const Tensor& x, const R2MNetParams& params,
                            bool gates_enabled) {
  BranchTrace rnet = branch_forward(x, params.rnet, params.config);

  ForwardTrace trace;
  trace.radiology_logits = rnet.logits;
  trace.rnet_stage_features = rnet.block_features;

  Tensor y = stem_forward(x, params.mnet);
  for (std::size_t s = 0; s < 4; ++s) {
    y = block_forward(y, params.mnet.blocks[s]);
    if (gates_enabled) {
      auto [gated, state] = agu_forward(rnet.block_features[s], y, params.agus[s]);
      y = gated;
      trace.agu_states[s] = std::move(state);
    }
    y = maxpool3d(y, 2, 2);
  }
  trace.mnet_last_activation = y;
  Tensor pooled = global_avg_pool(y);
  trace.malignancy_logits =
      linear(pooled, params.mnet.head.weight, params.mnet.head.bias);
  return trace;
}

Tensor multi_task_loss(const ForwardTrace& trace, std::int64_t y_radiology,
                       std::int64_t y_malignancy, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("multi_task_loss: lambda must lie in [0,1]");
  }
  Tensor ce_r = cross_entropy(trace.radiology_logits, y_radiology);
  Tensor ce_m = cross_entropy(trace.malignancy_logits, y_malignancy);
  return add(scale(ce_r, lambda), scale(ce_m, 1.0 - lambda));
}

NetShapes trace_shapes(const ModelConfig& cfg) {
  cfg.validate();
  NetShapes shapes;
  std::int64_t res = cfg.input_size;
  shapes.stem_output = {cfg.stem_channels, res, res, res};
  for (std::size_t s = 0; s < 4; ++s) {
    const std::int64_t c = cfg.block_channels[s];
    shapes.stages[s].block_output = {c, res, res, res};
    res /= 2;
    shapes.stages[s].stage_output = {c, res, res, res};
  }
  shapes.last_activation = shapes.stages[3].stage_output;
  return shapes;
}

}  // namespace r2m
