#include <doctest.h>

#include <cmath>
#include <numeric>

#include "r2m/rng.hpp"
#include "r2m/tensor.hpp"
#include "test_support.hpp"

using namespace r2m;
using r2m::testing::random_tensor;

namespace {

// Seven-loop reference convolution, independent of the library path.
Tensor naive_conv3d(const Tensor& input, const Tensor& weight,
                    const Tensor& bias, int stride, int padding) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  const std::int64_t c_in = is[0], d = is[1], h = is[2], w = is[3];
  const std::int64_t c_out = ws[0], k = ws[2];
  const std::int64_t od = (d + 2 * padding - k) / stride + 1;
  const std::int64_t oh = (h + 2 * padding - k) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(c_out * od * oh * ow), 0.0);
  for (std::int64_t co = 0; co < c_out; ++co)
    for (std::int64_t z = 0; z < od; ++z)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          double acc = bias.data()[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < c_in; ++ci)
            for (std::int64_t kd = 0; kd < k; ++kd)
              for (std::int64_t kh = 0; kh < k; ++kh)
                for (std::int64_t kw = 0; kw < k; ++kw) {
                  const std::int64_t id = z * stride - padding + kd;
                  const std::int64_t ih = y * stride - padding + kh;
                  const std::int64_t iw = x * stride - padding + kw;
                  if (id < 0 || id >= d || ih < 0 || ih >= h || iw < 0 || iw >= w)
                    continue;
                  acc += input.data()[static_cast<std::size_t>(
                             ((ci * d + id) * h + ih) * w + iw)] *
                         weight.data()[static_cast<std::size_t>(
                             (((co * c_in + ci) * k + kd) * k + kh) * k + kw)];
                }
          out[static_cast<std::size_t>(((co * od + z) * oh + y) * ow + x)] = acc;
        }
  return Tensor::from(std::move(out), {c_out, od, oh, ow});
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    CHECK(std::abs(a.data()[i] - b.data()[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("conv3d identity kernel keeps the volume") {
  std::vector<double> in(8);
  std::iota(in.begin(), in.end(), 0.0);
  Tensor x = Tensor::from(in, {1, 2, 2, 2});
  Tensor w = Tensor::from({1.0}, {1, 1, 1, 1, 1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv3d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 2, 2, 2});
  CHECK(y.data() == x.data());
}

TEST_CASE("conv3d all-ones 3-cube sums 27 voxels") {
  Tensor x = Tensor::full({1, 3, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv3d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value() == doctest::Approx(27.0));
  Tensor oracle = naive_conv3d(x, w, b, 1, 0);
  CHECK(y.value() == oracle.value());
}

TEST_CASE("conv3d padding gives 2x2x2 corner overlap") {
  Tensor x = Tensor::full({1, 3, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv3d(x, w, b, 1, 1);
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(8.0));
  CHECK(y.at({0, 1, 1, 1}) == doctest::Approx(27.0));
  check_close(y, naive_conv3d(x, w, b, 1, 1), 1e-12);
}

TEST_CASE("conv3d matches the seven-loop oracle on small shapes") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::int64_t c_in = rng.uniform_int(1, 3);
    const std::int64_t c_out = rng.uniform_int(1, 3);
    const std::int64_t k = rng.uniform_int(0, 1) == 0 ? 1 : 3;
    const std::int64_t d = rng.uniform_int(k, 5);
    const std::int64_t h = rng.uniform_int(k, 5);
    const std::int64_t w = rng.uniform_int(k, 5);
    const int padding = static_cast<int>(rng.uniform_int(0, 1));
    int stride = static_cast<int>(rng.uniform_int(1, 2));
    if ((d + 2 * padding - k) % stride || (h + 2 * padding - k) % stride ||
        (w + 2 * padding - k) % stride) {
      stride = 1;
    }
    Tensor x = random_tensor({c_in, d, h, w}, rng);
    Tensor wt = random_tensor({c_out, c_in, k, k, k}, rng);
    Tensor b = random_tensor({c_out}, rng);
    Tensor direct = conv3d_direct(x, wt, b, stride, padding);
    Tensor fast = conv3d(x, wt, b, stride, padding);
    Tensor oracle = naive_conv3d(x, wt, b, stride, padding);
    check_close(direct, oracle, 1e-12);
    check_close(fast, oracle, 1e-12);
  }
}

TEST_CASE("conv3d gemm path agrees with the direct path at network sizes") {
  Rng rng(11);
  Tensor x = random_tensor({4, 12, 12, 12}, rng);
  Tensor w = random_tensor({6, 4, 3, 3, 3}, rng);
  Tensor b = random_tensor({6}, rng);
  check_close(conv3d(x, w, b, 1, 1), conv3d_direct(x, w, b, 1, 1), 1e-12);
}

TEST_CASE("conv3d rejects bad shapes with an axis diagnostic") {
  Tensor x = Tensor::zeros({2, 4, 4, 4});
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_WITH_AS(conv3d(x, Tensor::zeros({1, 3, 3, 3, 3}), b, 1, 1),
                       doctest::Contains("channel axis"), ValidationError);
  // (4 - 3) is not divisible by stride 2
  CHECK_THROWS_WITH_AS(conv3d(x, Tensor::zeros({1, 2, 3, 3, 3}), b, 2, 0),
                       doctest::Contains("non-integer output extent"),
                       ValidationError);
  CHECK_THROWS_AS(conv3d(x, Tensor::zeros({1, 2, 2, 2, 2}), b, 1, 0),
                  ValidationError);  // even kernel
}

TEST_CASE("maxpool3d basics") {
  std::vector<double> in(8);
  std::iota(in.begin(), in.end(), 0.0);
  Tensor y = maxpool3d(Tensor::from(in, {1, 2, 2, 2}));
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value() == 7.0);

  Tensor c = maxpool3d(Tensor::full({2, 4, 4, 4}, 3.25));
  CHECK(c.shape() == Shape{2, 2, 2, 2});
  for (double v : c.data()) CHECK(v == 3.25);

  CHECK_THROWS_AS(maxpool3d(Tensor::zeros({1, 3, 4, 4})), ValidationError);
}

TEST_CASE("maxpool3d equals a brute-force window scan") {
  Rng rng(3);
  Tensor x = random_tensor({1, 4, 4, 4}, rng);
  Tensor y = maxpool3d(x);
  for (std::int64_t zd = 0; zd < 2; ++zd)
    for (std::int64_t yh = 0; yh < 2; ++yh)
      for (std::int64_t xw = 0; xw < 2; ++xw) {
        double best = -1e300;
        for (std::int64_t a = 0; a < 2; ++a)
          for (std::int64_t b = 0; b < 2; ++b)
            for (std::int64_t c = 0; c < 2; ++c) {
              best = std::max(best, x.at({0, 2 * zd + a, 2 * yh + b, 2 * xw + c}));
            }
        CHECK(y.at({0, zd, yh, xw}) == best);
      }
}

TEST_CASE("global_avg_pool means") {
  CHECK(global_avg_pool(Tensor::full({1, 4, 4, 4}, 2.0)).value() == 2.0);

  std::vector<double> ramp(8);
  std::iota(ramp.begin(), ramp.end(), 0.0);
  CHECK(global_avg_pool(Tensor::from(ramp, {1, 2, 2, 2})).value() ==
        doctest::Approx(3.5));

  std::vector<double> two(16, 0.0);
  std::fill(two.begin() + 8, two.end(), 1.0);
  Tensor y = global_avg_pool(Tensor::from(two, {2, 2, 2, 2}));
  CHECK(y.at({0}) == 0.0);
  CHECK(y.at({1}) == 1.0);
}

TEST_CASE("linear basics and dot-product oracle") {
  Tensor x = Tensor::from({1.0, -2.0, 3.0}, {3});
  Tensor eye = Tensor::from({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
  Tensor z3 = Tensor::zeros({3});
  CHECK(linear(x, eye, z3).data() == x.data());

  Tensor bias = Tensor::from({0.5, -1.5}, {2});
  CHECK(linear(x, Tensor::zeros({2, 3}), bias).data() == bias.data());

  Rng rng(5);
  Tensor xr = random_tensor({3}, rng);
  Tensor w = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor y = linear(xr, w, b);
  for (int g = 0; g < 2; ++g) {
    double acc = b.at({g});
    for (int f = 0; f < 3; ++f) acc += w.at({g, f}) * xr.at({f});
    CHECK(y.at({g}) == doctest::Approx(acc).epsilon(1e-14));
  }
  CHECK_THROWS_AS(linear(xr, Tensor::zeros({2, 4}), b), ValidationError);
}

TEST_CASE("activation values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == 0.5);

  Tensor sm = softmax(Tensor::full({4}, 1.7));
  for (double v : sm.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-13));

  Tensor s2 = softmax(Tensor::from({-1.0, 3.0}, {2}));
  // scalar oracle: exp / normalize
  const double e0 = std::exp(-1.0), e1 = std::exp(3.0);
  CHECK(s2.at({0}) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(s2.at({0}) == doctest::Approx(0.017986).epsilon(1e-4));
  CHECK(s2.at({1}) == doctest::Approx(0.982014).epsilon(1e-4));
}

TEST_CASE("softmax rows are probability vectors") {
  Rng rng(13);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor x = random_tensor({3, 5}, rng, -30, 30);
    Tensor y = softmax(x);
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (int c = 0; c < 5; ++c) {
        CHECK(y.at({r, c}) >= 0.0);
        s += y.at({r, c});
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("channel_scale gating") {
  Rng rng(17);
  Tensor x = random_tensor({3, 2, 2, 2}, rng);
  CHECK(channel_scale(x, Tensor::full({3}, 1.0)).data() == x.data());
  for (double v : channel_scale(x, Tensor::zeros({3})).data()) CHECK(v == 0.0);

  Tensor half = channel_scale(Tensor::full({1, 2, 2, 2}, 2.0),
                              Tensor::from({0.5}, {1}));
  for (double v : half.data()) CHECK(v == 1.0);

  CHECK_THROWS_AS(channel_scale(x, Tensor::zeros({2})), ValidationError);
}

TEST_CASE("channel_scale commutes with global_avg_pool") {
  Rng rng(19);
  Tensor x = random_tensor({4, 3, 3, 3}, rng);
  Tensor g = random_tensor({4}, rng);
  Tensor lhs = global_avg_pool(channel_scale(x, g));
  Tensor rhs = global_avg_pool(x);
  for (int c = 0; c < 4; ++c) {
    CHECK(lhs.at({c}) == doctest::Approx(g.at({c}) * rhs.at({c})).epsilon(1e-12));
  }
}

TEST_CASE("cross_entropy closed forms") {
  CHECK(cross_entropy(Tensor::zeros({4}), 2).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-13));
  CHECK(cross_entropy(Tensor::full({2}, -3.0), 0).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-13));
  CHECK(cross_entropy(Tensor::from({30.0, -30.0}, {2}), 0).value() < 1e-12);
  CHECK(cross_entropy(Tensor::from({30.0, -30.0}, {2}), 0).value() > 0.0);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({4}), 4), ValidationError);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({4}), -1), ValidationError);
}

TEST_CASE("backward on simple graphs") {
  Rng rng(23);
  Tensor x0 = random_tensor({2, 3}, rng);

  SUBCASE("sum gives ones") {
    Tape tape;
    Tensor x = tape.leaf(x0);
    tape.backward(sum_all(x));
    for (double v : tape.gradient(x).data()) CHECK(v == 1.0);
  }

  SUBCASE("half squared norm gives x") {
    Tape tape;
    Tensor x = tape.leaf(x0);
    tape.backward(scale(sum_all(mul(x, x)), 0.5));
    Tensor g = tape.gradient(x);
    for (std::size_t i = 0; i < g.data().size(); ++i) {
      CHECK(g.data()[i] == doctest::Approx(x0.data()[i]).epsilon(1e-14));
    }
  }

  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Tensor x = tape.leaf(x0);
    CHECK_THROWS_AS(tape.backward(x), ValidationError);
  }

  SUBCASE("repeated backward is identical") {
    Tape tape;
    Tensor x = tape.leaf(x0);
    Tensor loss = sum_all(mul(sigmoid(x), x));
    tape.backward(loss);
    const std::vector<double> first = tape.gradient(x).data();
    tape.backward(loss);
    CHECK(tape.gradient(x).data() == first);
  }
}

TEST_CASE("gradient shapes mirror value shapes after backward") {
  Rng rng(29);
  Tape tape;
  Tensor x = tape.leaf(random_tensor({2, 4, 4, 4}, rng));
  Tensor w = tape.leaf(random_tensor({3, 2, 3, 3, 3}, rng));
  Tensor b = tape.leaf(random_tensor({3}, rng));
  Tensor y = relu(conv3d(x, w, b, 1, 1));
  Tensor loss = sum_all(y);
  tape.backward(loss);
  CHECK(tape.gradient(x).shape() == x.shape());
  CHECK(tape.gradient(w).shape() == w.shape());
  CHECK(tape.gradient(b).shape() == b.shape());
  CHECK(tape.gradient(y).shape() == y.shape());
}

TEST_CASE("grad_check: exact and composite cases") {
  Rng rng(31);
  Tensor x = random_tensor({6}, rng);

  auto total = [](const Tensor& t) { return sum_all(t); };
  CHECK(grad_check(total, x, 1e-5).max_rel_error < 1e-9);

  Tensor w = random_tensor({3, 6}, rng);
  Tensor b = random_tensor({3}, rng);
  auto ce_of_linear = [&](const Tensor& t) {
    return cross_entropy(linear(t, w, b), 1);
  };
  CHECK(grad_check(ce_of_linear, x, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("finite differences validate every op backward") {
  Rng rng(37);
  const double h = 1e-5;

  SUBCASE("relu") {
    Tensor x = random_tensor({20}, rng);
    Tensor mix = random_tensor({20}, rng);
    auto f = [&](const Tensor& t) { return sum_all(mul(relu(t), mix)); };
    CHECK(grad_check(f, x, h).max_rel_error < 1e-6);
  }
  SUBCASE("sigmoid") {
    Tensor x = random_tensor({20}, rng);
    auto f = [](const Tensor& t) { return sum_all(sigmoid(t)); };
    CHECK(grad_check(f, x, h).max_rel_error < 1e-6);
  }
  SUBCASE("softmax") {
    Tensor x = random_tensor({6}, rng);
    Tensor mix = random_tensor({6}, rng);
    auto f = [&](const Tensor& t) { return sum_all(mul(softmax(t), mix)); };
    CHECK(grad_check(f, x, h).max_rel_error < 1e-6);
  }
  SUBCASE("linear in all arguments") {
    Tensor x = random_tensor({5}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({4}, rng);
    auto fx = [&](const Tensor& t) { return cross_entropy(linear(t, w, b), 2); };
    auto fw = [&](const Tensor& t) { return cross_entropy(linear(x, t, b), 2); };
    auto fb = [&](const Tensor& t) { return cross_entropy(linear(x, w, t), 2); };
    CHECK(grad_check(fx, x, h).max_rel_error < 1e-6);
    CHECK(grad_check(fw, w, h).max_rel_error < 1e-6);
    CHECK(grad_check(fb, b, h).max_rel_error < 1e-6);
  }
  SUBCASE("global_avg_pool and channel_scale") {
    Tensor x = random_tensor({3, 2, 2, 2}, rng);
    Tensor g = random_tensor({3}, rng);
    auto fx = [&](const Tensor& t) {
      return sum_all(mul(global_avg_pool(channel_scale(t, g)), g));
    };
    auto fg = [&](const Tensor& t) {
      return sum_all(global_avg_pool(channel_scale(x, t)));
    };
    CHECK(grad_check(fx, x, h).max_rel_error < 1e-6);
    CHECK(grad_check(fg, g, h).max_rel_error < 1e-6);
  }
  SUBCASE("conv3d in all arguments") {
    Tensor x = random_tensor({2, 4, 4, 4}, rng);
    Tensor w = random_tensor({2, 2, 3, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor mix = random_tensor({2}, rng);
    auto head = [&](const Tensor& y) {
      return sum_all(mul(global_avg_pool(y), mix));
    };
    auto fx = [&](const Tensor& t) { return head(conv3d(t, w, b, 1, 1)); };
    auto fw = [&](const Tensor& t) { return head(conv3d(x, t, b, 1, 1)); };
    auto fb = [&](const Tensor& t) { return head(conv3d(x, w, t, 1, 1)); };
    CHECK(grad_check(fx, x, h).max_rel_error < 1e-5);
    CHECK(grad_check(fw, w, h).max_rel_error < 1e-5);
    CHECK(grad_check(fb, b, h).max_rel_error < 1e-5);
  }
  SUBCASE("maxpool3d away from ties") {
    Tensor x = random_tensor({2, 4, 4, 4}, rng);
    auto f = [](const Tensor& t) { return sum_all(maxpool3d(t)); };
    CHECK(grad_check(f, x, h).max_rel_error < 1e-5);
  }
  SUBCASE("cross_entropy") {
    Tensor x = random_tensor({5}, rng);
    auto f = [](const Tensor& t) { return cross_entropy(t, 3); };
    CHECK(grad_check(f, x, h).max_rel_error < 1e-6);
  }
}

TEST_CASE("tensor construction contracts") {
  CHECK_THROWS_AS(Tensor::from({1.0, 2.0}, {3}), ValidationError);
  CHECK_THROWS_AS(Tensor::from({}, {0}), ValidationError);
  CHECK(Tensor::scalar(4.0).value() == 4.0);
  CHECK_THROWS_AS(Tensor::zeros({2}).value(), ValidationError);
}

TEST_CASE("ops refuse tensors from different tapes") {
  Tape t1, t2;
  Tensor a = t1.leaf(Tensor::zeros({2}));
  Tensor b = t2.leaf(Tensor::zeros({2}));
  CHECK_THROWS_AS(add(a, b), ValidationError);
}
