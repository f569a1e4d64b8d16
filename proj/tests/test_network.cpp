#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "r2m/augment.hpp"
#include "r2m/checkpoint.hpp"
#include "r2m/net.hpp"
#include "r2m/rng.hpp"
#include "r2m/train.hpp"
#include "test_support.hpp"

using namespace r2m;
using r2m::testing::random_tensor;
using r2m::testing::tiny_config;

namespace {

// Plain scalar-arithmetic walk through squeeze, excitation and rescale,
// independent of the tensor engine.
struct AguOracle {
  std::vector<double> descriptor, gate, output;
};

AguOracle agu_oracle(const Tensor& R, const Tensor& M, const AguParams& p) {
  const std::int64_t c = R.shape()[0];
  const std::int64_t voxels = R.numel() / c;
  AguOracle o;
  o.descriptor.resize(static_cast<std::size_t>(c));
  for (std::int64_t n = 0; n < c; ++n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < voxels; ++i) {
      s += R.data()[static_cast<std::size_t>(n * voxels + i)];
    }
    o.descriptor[static_cast<std::size_t>(n)] = s / static_cast<double>(voxels);
  }
  const std::int64_t mid = p.reduce.weight.shape()[0];
  std::vector<double> hidden(static_cast<std::size_t>(mid));
  for (std::int64_t i = 0; i < mid; ++i) {
    double s = p.reduce.bias.data()[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < c; ++j) {
      s += p.reduce.weight.at({i, j}) * o.descriptor[static_cast<std::size_t>(j)];
    }
    hidden[static_cast<std::size_t>(i)] = std::max(0.0, s);
  }
  o.gate.resize(static_cast<std::size_t>(c));
  for (std::int64_t i = 0; i < c; ++i) {
    double s = p.expand.bias.data()[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < mid; ++j) {
      s += p.expand.weight.at({i, j}) * hidden[static_cast<std::size_t>(j)];
    }
    o.gate[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-s));
  }
  o.output.resize(static_cast<std::size_t>(M.numel()));
  for (std::int64_t n = 0; n < c; ++n) {
    for (std::int64_t i = 0; i < voxels; ++i) {
      o.output[static_cast<std::size_t>(n * voxels + i)] =
          o.gate[static_cast<std::size_t>(n)] *
          M.data()[static_cast<std::size_t>(n * voxels + i)];
    }
  }
  return o;
}

AguParams random_agu(std::int64_t c, std::int64_t mid, Rng& rng) {
  AguParams p;
  p.reduce.weight = random_tensor({mid, c}, rng);
  p.reduce.bias = random_tensor({mid}, rng);
  p.expand.weight = random_tensor({c, mid}, rng);
  p.expand.bias = random_tensor({c}, rng);
  return p;
}

}  // namespace

TEST_CASE("agu with zero weights halves the malignancy features") {
  Rng rng(41);
  Tensor R = random_tensor({3, 2, 2, 2}, rng);
  Tensor M = random_tensor({3, 2, 2, 2}, rng);
  AguParams p;
  p.reduce.weight = Tensor::zeros({2, 3});
  p.reduce.bias = Tensor::zeros({2});
  p.expand.weight = Tensor::zeros({3, 2});
  p.expand.bias = Tensor::zeros({3});
  auto [out, state] = agu_forward(R, M, p);
  for (double g : state.gate.data()) CHECK(g == 0.5);
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(0.5 * M.data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("agu descriptor equals per-channel constants exactly") {
  Rng rng(43);
  std::vector<double> d;
  const std::vector<double> levels{0.25, -1.5, 3.0};
  for (double v : levels) d.insert(d.end(), 8, v);
  Tensor R = Tensor::from(d, {3, 2, 2, 2});
  Tensor M = random_tensor({3, 2, 2, 2}, rng);
  auto [out, state] = agu_forward(R, M, random_agu(3, 2, rng));
  for (std::size_t i = 0; i < levels.size(); ++i) {
    CHECK(state.descriptor.data()[i] == levels[i]);
  }
}

TEST_CASE("agu matches the scalar oracle on random instances") {
  Rng rng(47);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor R = random_tensor({4, 2, 2, 2}, rng);
    Tensor M = random_tensor({4, 2, 2, 2}, rng);
    AguParams p = random_agu(4, 2, rng);
    AguOracle oracle = agu_oracle(R, M, p);
    auto [got, st] = agu_forward(R, M, p);
    for (std::size_t i = 0; i < oracle.descriptor.size(); ++i) {
      CHECK(std::abs(st.descriptor.data()[i] - oracle.descriptor[i]) <= 1e-10);
      CHECK(std::abs(st.gate.data()[i] - oracle.gate[i]) <= 1e-10);
    }
    for (std::size_t i = 0; i < oracle.output.size(); ++i) {
      CHECK(std::abs(got.data()[i] - oracle.output[i]) <= 1e-10);
    }
  }
}

TEST_CASE("agu rejects branch shape mismatch") {
  Rng rng(53);
  CHECK_THROWS_AS(agu_forward(Tensor::zeros({3, 2, 2, 2}),
                              Tensor::zeros({3, 4, 4, 4}), random_agu(3, 2, rng)),
                  ValidationError);
}

TEST_CASE("agu gates stay strictly inside (0,1)") {
  Rng rng(59);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor R = random_tensor({4, 2, 2, 2}, rng, -5, 5);
    Tensor M = random_tensor({4, 2, 2, 2}, rng);
    auto [out, state] = agu_forward(R, M, random_agu(4, 2, rng));
    for (double g : state.gate.data()) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
  }
}

TEST_CASE("residual unit endpoint behaviors") {
  Rng rng(61);
  Tensor x = random_tensor({3, 4, 4, 4}, rng);

  ResidualUnitParams zero{{Tensor::zeros({3, 3, 3, 3, 3}), Tensor::zeros({3})},
                          {Tensor::zeros({3, 3, 3, 3, 3}), Tensor::zeros({3})}};
  Tensor y = residual_unit(x, zero);
  for (std::size_t i = 0; i < y.data().size(); ++i) {
    CHECK(y.data()[i] == std::max(0.0, x.data()[i]));
  }

  ResidualUnitParams rnd{{random_tensor({3, 3, 3, 3, 3}, rng), Tensor::zeros({3})},
                         {random_tensor({3, 3, 3, 3, 3}, rng), Tensor::zeros({3})}};
  Tensor zero_in = Tensor::zeros({3, 4, 4, 4});
  for (double v : residual_unit(zero_in, rnd).data()) CHECK(v == 0.0);

  // composition oracle from the audited primitives
  Tensor f = conv3d_direct(relu(conv3d_direct(x, rnd.conv1.weight, rnd.conv1.bias, 1, 1)),
                           rnd.conv2.weight, rnd.conv2.bias, 1, 1);
  Tensor expect = relu(add(x, f));
  Tensor got = residual_unit(x, rnd);
  for (std::size_t i = 0; i < got.data().size(); ++i) {
    CHECK(std::abs(got.data()[i] - expect.data()[i]) <= 1e-12);
  }
}

TEST_CASE("zero-weight branch yields zero logits") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::zeros(cfg);
  Tensor x = Tensor::full({1, 16, 16, 16}, 0.3);
  BranchTrace trace = rnet_forward(x, params);
  CHECK(trace.logits.shape() == Shape{4});
  for (double v : trace.logits.data()) CHECK(v == 0.0);
}

TEST_CASE("symbolic shape trace reproduces the published stage sizes") {
  NetShapes shapes = trace_shapes(ModelConfig::paper());
  CHECK(shapes.stages[0].stage_output == Shape{32, 48, 48, 48});
  CHECK(shapes.stages[1].stage_output == Shape{64, 24, 24, 24});
  CHECK(shapes.stages[2].stage_output == Shape{128, 12, 12, 12});
  CHECK(shapes.stages[3].stage_output == Shape{256, 6, 6, 6});
  CHECK(shapes.last_activation == Shape{256, 6, 6, 6});
}

TEST_CASE("branch forward realizes the traced shapes on a small config") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 1);
  Rng rng(67);
  Tensor x = random_tensor({1, 16, 16, 16}, rng, 0, 1);
  BranchTrace trace = branch_forward(x, params.rnet, cfg);
  NetShapes shapes = trace_shapes(cfg);
  for (int s = 0; s < 4; ++s) {
    CHECK(trace.block_features[static_cast<std::size_t>(s)].shape() ==
          shapes.stages[static_cast<std::size_t>(s)].block_output);
    CHECK(trace.stage_features[static_cast<std::size_t>(s)].shape() ==
          shapes.stages[static_cast<std::size_t>(s)].stage_output);
  }
  CHECK(trace.last_activation.shape() == shapes.last_activation);

  CHECK_THROWS_AS(branch_forward(Tensor::zeros({1, 32, 32, 32}), params.rnet, cfg),
                  ValidationError);
}

TEST_CASE("logits change under rotation of an asymmetric input") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 5);
  Rng rng(71);
  VolumeSample s;
  s.volume.extents = {16, 16, 16};
  s.volume.stage = VolumeStage::normalized;
  s.volume.voxels.resize(16 * 16 * 16);
  for (auto& v : s.volume.voxels) v = rng.uniform();
  AugmentParams rot;
  rot.quarter_turns = {1, 0, 0};
  VolumeSample rotated = apply_augment(s, rot);

  Tensor a = rnet_forward(s.to_tensor(), params).logits;
  Tensor b = rnet_forward(rotated.to_tensor(), params).logits;
  double diff = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
  }
  CHECK(diff > 1e-9);
}

TEST_CASE("zero agu weights halve every gated stage") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 7);
  for (auto& agu : params.agus) {
    agu.reduce.weight = Tensor::zeros(agu.reduce.weight.shape());
    agu.reduce.bias = Tensor::zeros(agu.reduce.bias.shape());
    agu.expand.weight = Tensor::zeros(agu.expand.weight.shape());
    agu.expand.bias = Tensor::zeros(agu.expand.bias.shape());
  }
  Rng rng(73);
  Tensor x = random_tensor({1, 16, 16, 16}, rng, 0, 1);
  ForwardTrace trace = r2mnet_forward(x, params, true);
  for (const auto& st : trace.agu_states) {
    REQUIRE(!st.output.empty());
    for (std::size_t i = 0; i < st.output.data().size(); ++i) {
      CHECK(st.output.data()[i] ==
            doctest::Approx(0.5 * st.input_malignancy.data()[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("twin forward smoke: finite logits, valid distributions") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 11);
  Rng rng(79);
  Tensor x = random_tensor({1, 16, 16, 16}, rng, 0, 1);
  ForwardTrace trace = r2mnet_forward(x, params);
  for (double v : trace.radiology_logits.data()) CHECK(std::isfinite(v));
  for (double v : trace.malignancy_logits.data()) CHECK(std::isfinite(v));
  for (Tensor probs : {softmax(trace.radiology_logits), softmax(trace.malignancy_logits)}) {
    double sum = 0.0;
    for (double v : probs.data()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  // stage alignment between the branches
  for (int s = 0; s < 4; ++s) {
    const auto& st = trace.agu_states[static_cast<std::size_t>(s)];
    CHECK(st.input_radiology.shape() == st.input_malignancy.shape());
    CHECK(trace.rnet_stage_features[static_cast<std::size_t>(s)].shape() ==
          st.input_radiology.shape());
  }
  CHECK(trace.mnet_last_activation.shape()[0] == cfg.block_channels[3]);
}

TEST_CASE("gradient reaches the radiology stem through the gates alone") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 13);
  Rng rng(83);
  VolumeSample s;
  s.volume.extents = {16, 16, 16};
  s.volume.stage = VolumeStage::normalized;
  s.volume.voxels.resize(16 * 16 * 16);
  for (auto& v : s.volume.voxels) v = rng.uniform();
  s.radiology_label = RadiologyClass::GGO;
  s.malignancy_label = Malignancy::malignant;

  // lambda = 0 puts all weight on the malignancy head, so any gradient in the
  // radiology stem must have flowed through the gating path.
  auto [grads, loss] = sample_gradient(params, s, 0.0);
  std::size_t index = 0, stem_index = 0;
  params.for_each([&](const std::string& name, Tensor&) {
    if (name == "rnet.stem1.weight") stem_index = index;
    ++index;
  });
  REQUIRE(!grads[stem_index].empty());
  double norm = 0.0;
  for (double g : grads[stem_index]) norm += std::abs(g);
  CHECK(norm > 0.0);

  // finite-difference probe on one coordinate
  const std::int64_t coord = 0;
  auto f = [&](const Tensor& t) {
    R2MNetParams p = params;
    p.rnet.stem1.weight = t;
    Tape tape;
    R2MNetParams tracked = p.tracked(tape);
    ForwardTrace trace = r2mnet_forward(s.to_tensor(), tracked, true);
    return multi_task_loss(trace, 2, 1, 0.0).detached();
  };
  const double h = 1e-5;
  std::vector<double> probe(params.rnet.stem1.weight.data());
  probe[0] += h;
  const double fp = f(Tensor::from(probe, params.rnet.stem1.weight.shape())).value();
  probe[0] -= 2 * h;
  const double fm = f(Tensor::from(probe, params.rnet.stem1.weight.shape())).value();
  const double numeric = (fp - fm) / (2 * h);
  CHECK(grads[stem_index][static_cast<std::size_t>(coord)] ==
        doctest::Approx(numeric).epsilon(1e-4));
}

TEST_CASE("multi-task loss endpoints and interpolation") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 17);
  Rng rng(89);
  Tensor x = random_tensor({1, 16, 16, 16}, rng, 0, 1);
  ForwardTrace trace = r2mnet_forward(x, params);

  const double ce_r = cross_entropy(trace.radiology_logits.detached(), 1).value();
  const double ce_m = cross_entropy(trace.malignancy_logits.detached(), 0).value();
  CHECK(multi_task_loss(trace, 1, 0, 1.0).value() == doctest::Approx(ce_r).epsilon(1e-14));
  CHECK(multi_task_loss(trace, 1, 0, 0.0).value() == doctest::Approx(ce_m).epsilon(1e-14));
  const double mid = multi_task_loss(trace, 1, 0, 0.5).value();
  CHECK(std::abs(mid - 0.5 * (ce_r + ce_m)) < 1e-12);

  CHECK_THROWS_AS(multi_task_loss(trace, 1, 0, 1.5), ValidationError);
  CHECK_THROWS_AS(multi_task_loss(trace, 9, 0, 0.5), ValidationError);
}

TEST_CASE("uniform logits give the closed-form multi-task loss") {
  ForwardTrace trace;
  trace.radiology_logits = Tensor::zeros({4});
  trace.malignancy_logits = Tensor::zeros({2});
  CHECK(multi_task_loss(trace, 0, 0, 0.5).value() ==
        doctest::Approx(0.5 * (std::log(4.0) + std::log(2.0))).epsilon(1e-12));
  CHECK(multi_task_loss(trace, 0, 0, 0.5).value() == doctest::Approx(1.039721).epsilon(1e-6));
}

TEST_CASE("bypassed gates reproduce the ungated branch exactly") {
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 19);
  Rng rng(97);
  Tensor x = random_tensor({1, 16, 16, 16}, rng, 0, 1);
  ForwardTrace gated_off = r2mnet_forward(x, params, false);
  BranchTrace plain = branch_forward(x, params.mnet, cfg);
  REQUIRE(gated_off.malignancy_logits.shape() == plain.logits.shape());
  for (std::size_t i = 0; i < plain.logits.data().size(); ++i) {
    CHECK(std::abs(gated_off.malignancy_logits.data()[i] - plain.logits.data()[i]) <
          1e-9);
  }
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.input_size = 24;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.loss_lambda = 1.2;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.se_reduction_ratio = 16;  // block_channels[3] = 4 -> degenerate
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(ModelConfig::desk().bottleneck(0) == 1);  // clamped
  CHECK(ModelConfig::paper().bottleneck(3) == 16);
}

TEST_CASE("checkpoint round-trips byte-identically") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "r2m_ckpt_test";
  fs::create_directories(dir);
  ModelConfig cfg = tiny_config();
  R2MNetParams params = R2MNetParams::init(cfg, 23);

  const fs::path a = dir / "a.r2mparam";
  const fs::path b = dir / "b.r2mparam";
  save_checkpoint(a, params);
  R2MNetParams loaded = load_checkpoint(a);
  save_checkpoint(b, loaded);

  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(fa)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(fb)), {});
  CHECK(bytes_a == bytes_b);
  CHECK(!bytes_a.empty());

  SUBCASE("corrupted magic is rejected") {
    std::string broken = bytes_a;
    broken[0] = 'X';
    const fs::path c = dir / "c.r2mparam";
    std::ofstream(c, std::ios::binary).write(broken.data(),
                                             static_cast<std::streamsize>(broken.size()));
    CHECK_THROWS_WITH_AS(load_checkpoint(c), doctest::Contains("bad magic"), IoError);
  }
  SUBCASE("truncation is rejected") {
    const fs::path t = dir / "t.r2mparam";
    std::ofstream(t, std::ios::binary)
        .write(bytes_a.data(), static_cast<std::streamsize>(bytes_a.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(t), IoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("scaling one gate coordinate scales that channel's norm linearly") {
  Rng rng(131);
  Tensor features = random_tensor({4, 3, 3, 3}, rng);
  std::vector<double> gate{0.9, 0.7, 0.5, 0.3};
  auto channel_l2 = [](const Tensor& t, int c) {
    double s = 0.0;
    for (int i = 0; i < 27; ++i) {
      const double v = t.data()[static_cast<std::size_t>(c * 27 + i)];
      s += v * v;
    }
    return std::sqrt(s);
  };
  Tensor base = channel_scale(features, Tensor::from(gate, {4}));
  for (const double factor : {0.5, 0.25, 0.0}) {
    std::vector<double> shrunk = gate;
    shrunk[2] *= factor;
    Tensor scaled = channel_scale(features, Tensor::from(shrunk, {4}));
    CHECK(channel_l2(scaled, 2) ==
          doctest::Approx(factor * channel_l2(base, 2)).epsilon(1e-12));
    CHECK(channel_l2(scaled, 0) == doctest::Approx(channel_l2(base, 0)).epsilon(1e-12));
  }
}
