#include "r2m/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace r2m {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

Tensor Tensor::from(std::vector<double> data, Shape shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] < 1) {
      throw ValidationError("tensor: axis " + std::to_string(i) +
                            " has extent " + std::to_string(shape[i]) +
                            " (must be >= 1)");
    }
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ValidationError("tensor: shape " + shape_str(shape) + " implies " +
                          std::to_string(shape_numel(shape)) +
                          " elements, got " + std::to_string(data.size()));
  }
  Tensor t;
  t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return from(std::vector<double>(static_cast<std::size_t>(n), value),
              std::move(shape));
}

Tensor Tensor::scalar(double value) { return from({value}, {}); }

double Tensor::value() const {
  if (numel() != 1) {
    throw ValidationError("tensor: value() requires one element, shape is " +
                          shape_str(shape_));
  }
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape_.size()) {
    throw ValidationError("tensor: index rank " + std::to_string(index.size()) +
                          " does not match shape " + shape_str(shape_));
  }
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[axis]) {
      throw ValidationError("tensor: index " + std::to_string(i) +
                            " out of bounds on axis " + std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor t = value;
  t.tape_ = this;
  t.node_ = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{BackwardFn{}, t.shape()});
  return t;
}

Tensor Tape::record(Tensor value, BackwardFn backward) {
  value.tape_ = this;
  value.node_ = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{std::move(backward), value.shape()});
  return value;
}

std::vector<double>& Tape::grad_buffer(std::int32_t node) {
  auto& g = grads_[static_cast<std::size_t>(node)];
  if (g.empty()) {
    g.assign(static_cast<std::size_t>(shape_numel(nodes_[static_cast<std::size_t>(node)].shape)),
             0.0);
  }
  return g;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this || loss.node() < 0) {
    throw ValidationError("backward: loss is not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw ValidationError("backward: loss must be scalar, shape is " +
                          shape_str(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.node())[0] = 1.0;
  for (std::int32_t id = loss.node(); id >= 0; --id) {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!grads_[static_cast<std::size_t>(id)].empty() && node.backward) {
      node.backward(grads_[static_cast<std::size_t>(id)], *this);
    }
  }
}

bool Tape::has_gradient(const Tensor& t) const {
  return t.tape() == this && t.node() >= 0 &&
         static_cast<std::size_t>(t.node()) < grads_.size() &&
         !grads_[static_cast<std::size_t>(t.node())].empty();
}

Tensor Tape::gradient(const Tensor& t) const {
  if (t.tape() != this || t.node() < 0) {
    throw ValidationError("gradient: tensor is not on this tape");
  }
  if (!has_gradient(t)) {
    return Tensor::zeros(t.shape());
  }
  return Tensor::from(grads_[static_cast<std::size_t>(t.node())], t.shape());
}

namespace detail {

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && t->tape() != tape) {
      throw ValidationError("op: inputs recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and dense ops
// ---------------------------------------------------------------------------

static void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Tensor y = Tensor::from(std::move(out), x.shape());
  detail::check_finite(y, "relu");
  Tape* tape = detail::common_tape({&x});
  if (!tape) return y;
  return tape->record(std::move(y), [x](const std::vector<double>& up, Tape& t) {
    if (!x.tracked()) return;
    auto& gx = t.grad_buffer(x.node());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < up.size(); ++i) {
      if (xd[i] > 0.0) gx[i] += up[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor y = Tensor::from(std::move(out), x.shape());
  detail::check_finite(y, "sigmoid");
  Tape* tape = detail::common_tape({&x});
  if (!tape) return y;
  Tensor y_saved = y.detached();
  return tape->record(std::move(y), [x, y_saved](const std::vector<double>& up, Tape& t) {
    if (!x.tracked()) return;
    auto& gx = t.grad_buffer(x.node());
    const auto& yd = y_saved.data();
    for (std::size_t i = 0; i < up.size(); ++i) {
      gx[i] += up[i] * yd[i] * (1.0 - yd[i]);
    }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.shape().empty()) {
    throw ValidationError("softmax: rank-0 input has no axis to normalize");
  }
  const std::int64_t last = x.shape().back();
  const std::int64_t rows = x.numel() / last;
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r * last);
    double m = xd[base];
    for (std::int64_t i = 1; i < last; ++i) m = std::max(m, xd[base + i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < last; ++i) {
      out[base + i] = std::exp(xd[base + i] - m);
      s += out[base + i];
    }
    for (std::int64_t i = 0; i < last; ++i) out[base + i] /= s;
  }
  Tensor y = Tensor::from(std::move(out), x.shape());
  detail::check_finite(y, "softmax");
  Tape* tape = detail::common_tape({&x});
  if (!tape) return y;
  Tensor y_saved = y.detached();
  return tape->record(std::move(y), [x, y_saved, last, rows](const std::vector<double>& up, Tape& t) {
    if (!x.tracked()) return;
    auto& gx = t.grad_buffer(x.node());
    const auto& yd = y_saved.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r * last);
      double dot = 0.0;
      for (std::int64_t i = 0; i < last; ++i) dot += up[base + i] * yd[base + i];
      for (std::int64_t i = 0; i < last; ++i) {
        gx[base + i] += yd[base + i] * (up[base + i] - dot);
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ValidationError("add: shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + " differ");
  }
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor y = Tensor::from(std::move(out), a.shape());
  detail::check_finite(y, "add");
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return y;
  return tape->record(std::move(y), [a, b](const std::vector<double>& up, Tape& t) {
    if (a.tracked()) add_into(t.grad_buffer(a.node()), up);
    if (b.tracked()) add_into(t.grad_buffer(b.node()), up);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ValidationError("mul: shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + " differ");
  }
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor y = Tensor::from(std::move(out), a.shape());
  detail::check_finite(y, "mul");
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return y;
  return tape->record(std::move(y), [a, b](const std::vector<double>& up, Tape& t) {
    if (a.tracked()) {
      auto& ga = t.grad_buffer(a.node());
      const auto& bd2 = b.data();
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * bd2[i];
    }
    if (b.tracked()) {
      auto& gb = t.grad_buffer(b.node());
      const auto& ad2 = a.data();
      for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i] * ad2[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (auto& v : out) v *= c;
  Tensor y = Tensor::from(std::move(out), a.shape());
  detail::check_finite(y, "scale");
  Tape* tape = detail::common_tape({&a});
  if (!tape) return y;
  return tape->record(std::move(y), [a, c](const std::vector<double>& up, Tape& t) {
    if (!a.tracked()) return;
    auto& ga = t.grad_buffer(a.node());
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += c * up[i];
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor y = Tensor::scalar(s);
  detail::check_finite(y, "sum_all");
  Tape* tape = detail::common_tape({&a});
  if (!tape) return y;
  return tape->record(std::move(y), [a](const std::vector<double>& up, Tape& t) {
    if (!a.tracked()) return;
    auto& ga = t.grad_buffer(a.node());
    for (auto& g : ga) g += up[0];
  });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.shape().size() != 4) {
    throw ValidationError("global_avg_pool: expected [C,D,H,W], got " +
                          shape_str(input.shape()));
  }
  const std::int64_t c = input.shape()[0];
  const std::int64_t voxels = input.numel() / c;
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  const auto& xd = input.data();
  for (std::int64_t n = 0; n < c; ++n) {
    double s = 0.0;
    const std::size_t base = static_cast<std::size_t>(n * voxels);
    for (std::int64_t i = 0; i < voxels; ++i) s += xd[base + i];
    out[static_cast<std::size_t>(n)] = s / static_cast<double>(voxels);
  }
  Tensor y = Tensor::from(std::move(out), {c});
  detail::check_finite(y, "global_avg_pool");
  Tape* tape = detail::common_tape({&input});
  if (!tape) return y;
  return tape->record(std::move(y), [input, c, voxels](const std::vector<double>& up, Tape& t) {
    if (!input.tracked()) return;
    auto& gx = t.grad_buffer(input.node());
    const double inv = 1.0 / static_cast<double>(voxels);
    for (std::int64_t n = 0; n < c; ++n) {
      const double g = up[static_cast<std::size_t>(n)] * inv;
      const std::size_t base = static_cast<std::size_t>(n * voxels);
      for (std::int64_t i = 0; i < voxels; ++i) gx[base + i] += g;
    }
  });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.shape().size() != 1 || weight.shape().size() != 2 ||
      bias.shape().size() != 1) {
    throw ValidationError("linear: expected input [F], weight [G,F], bias [G]");
  }
  const std::int64_t f = input.shape()[0];
  const std::int64_t g = weight.shape()[0];
  if (weight.shape()[1] != f) {
    throw ValidationError("linear: weight axis 1 has extent " +
                          std::to_string(weight.shape()[1]) +
                          " but input has " + std::to_string(f));
  }
  if (bias.shape()[0] != g) {
    throw ValidationError("linear: bias axis 0 has extent " +
                          std::to_string(bias.shape()[0]) +
                          " but weight axis 0 has " + std::to_string(g));
  }
  std::vector<double> out(static_cast<std::size_t>(g));
  const auto& xd = input.data();
  const auto& wd = weight.data();
  const auto& bd = bias.data();
  for (std::int64_t i = 0; i < g; ++i) {
    double s = bd[static_cast<std::size_t>(i)];
    const std::size_t base = static_cast<std::size_t>(i * f);
    for (std::int64_t j = 0; j < f; ++j) s += wd[base + j] * xd[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s;
  }
  Tensor y = Tensor::from(std::move(out), {g});
  detail::check_finite(y, "linear");
  Tape* tape = detail::common_tape({&input, &weight, &bias});
  if (!tape) return y;
  return tape->record(std::move(y), [input, weight, bias, f, g](const std::vector<double>& up, Tape& t) {
    if (input.tracked()) {
      auto& gx = t.grad_buffer(input.node());
      const auto& wd2 = weight.data();
      for (std::int64_t i = 0; i < g; ++i) {
        const double u = up[static_cast<std::size_t>(i)];
        const std::size_t base = static_cast<std::size_t>(i * f);
        for (std::int64_t j = 0; j < f; ++j) gx[static_cast<std::size_t>(j)] += u * wd2[base + j];
      }
    }
    if (weight.tracked()) {
      auto& gw = t.grad_buffer(weight.node());
      const auto& xd2 = input.data();
      for (std::int64_t i = 0; i < g; ++i) {
        const double u = up[static_cast<std::size_t>(i)];
        const std::size_t base = static_cast<std::size_t>(i * f);
        for (std::int64_t j = 0; j < f; ++j) gw[base + j] += u * xd2[static_cast<std::size_t>(j)];
      }
    }
    if (bias.tracked()) {
      add_into(t.grad_buffer(bias.node()), up);
    }
  });
}

Tensor channel_scale(const Tensor& features, const Tensor& gate) {
  if (features.shape().size() != 4) {
    throw ValidationError("channel_scale: features must be [C,D,H,W], got " +
                          shape_str(features.shape()));
  }
  if (gate.shape().size() != 1 || gate.shape()[0] != features.shape()[0]) {
    throw ValidationError("channel_scale: gate has " +
                          (gate.shape().empty() ? std::string("0")
                                                : std::to_string(gate.shape()[0])) +
                          " channels but features have " +
                          std::to_string(features.shape()[0]));
  }
  const std::int64_t c = features.shape()[0];
  const std::int64_t voxels = features.numel() / c;
  std::vector<double> out(features.numel());
  const auto& xd = features.data();
  const auto& gd = gate.data();
  for (std::int64_t n = 0; n < c; ++n) {
    const double g = gd[static_cast<std::size_t>(n)];
    const std::size_t base = static_cast<std::size_t>(n * voxels);
    for (std::int64_t i = 0; i < voxels; ++i) out[base + i] = xd[base + i] * g;
  }
  Tensor y = Tensor::from(std::move(out), features.shape());
  detail::check_finite(y, "channel_scale");
  Tape* tape = detail::common_tape({&features, &gate});
  if (!tape) return y;
  return tape->record(std::move(y), [features, gate, c, voxels](const std::vector<double>& up, Tape& t) {
    if (features.tracked()) {
      auto& gf = t.grad_buffer(features.node());
      const auto& gd2 = gate.data();
      for (std::int64_t n = 0; n < c; ++n) {
        const double g = gd2[static_cast<std::size_t>(n)];
        const std::size_t base = static_cast<std::size_t>(n * voxels);
        for (std::int64_t i = 0; i < voxels; ++i) gf[base + i] += up[base + i] * g;
      }
    }
    if (gate.tracked()) {
      auto& gg = t.grad_buffer(gate.node());
      const auto& xd2 = features.data();
      for (std::int64_t n = 0; n < c; ++n) {
        double s = 0.0;
        const std::size_t base = static_cast<std::size_t>(n * voxels);
        for (std::int64_t i = 0; i < voxels; ++i) s += up[base + i] * xd2[base + i];
        gg[static_cast<std::size_t>(n)] += s;
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::int64_t target_class) {
  if (logits.shape().size() != 1) {
    throw ValidationError("cross_entropy: logits must be rank 1, got " +
                          shape_str(logits.shape()));
  }
  const std::int64_t k = logits.shape()[0];
  if (target_class < 0 || target_class >= k) {
    throw ValidationError("cross_entropy: target class " +
                          std::to_string(target_class) + " out of range [0," +
                          std::to_string(k) + ")");
  }
  const auto& xd = logits.data();
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < xd.size(); ++i) {
    if (xd[i] > xd[argmax]) argmax = i;
  }
  const double m = xd[argmax];
  double rest = 0.0;
  std::vector<double> probs(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    probs[i] = std::exp(xd[i] - m);
    if (i != argmax) rest += probs[i];
  }
  const double norm = 1.0 + rest;
  for (auto& p : probs) p /= norm;
  // grouping (m - logit) first keeps the tiny log1p term from being swamped
  // when the prediction saturates toward the target
  const double loss =
      (m - xd[static_cast<std::size_t>(target_class)]) + std::log1p(rest);
  Tensor y = Tensor::scalar(loss);
  detail::check_finite(y, "cross_entropy");
  Tape* tape = detail::common_tape({&logits});
  if (!tape) return y;
  return tape->record(std::move(y), [logits, target_class, probs = std::move(probs)](
                                        const std::vector<double>& up, Tape& t) {
    if (!logits.tracked()) return;
    auto& gx = t.grad_buffer(logits.node());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      double g = probs[i];
      if (static_cast<std::int64_t>(i) == target_class) g -= 1.0;
      gx[i] += up[0] * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

static GradCheckResult grad_check_impl(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
    std::span<const std::int64_t> coordinates) {
  Tensor analytic;
  {
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor loss = f(xt);
    if (loss.numel() != 1) {
      throw ValidationError("grad_check: f must produce a scalar");
    }
    tape.backward(loss);
    analytic = tape.gradient(xt);
  }
  GradCheckResult result;
  const auto& ad = analytic.data();
  std::vector<double> probe(x.data());
  for (std::int64_t i : coordinates) {
    const double saved = probe[static_cast<std::size_t>(i)];
    probe[static_cast<std::size_t>(i)] = saved + h;
    const double fp = f(Tensor::from(probe, x.shape())).value();
    probe[static_cast<std::size_t>(i)] = saved - h;
    const double fm = f(Tensor::from(probe, x.shape())).value();
    probe[static_cast<std::size_t>(i)] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = ad[static_cast<std::size_t>(i)];
    const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_coordinate = i;
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double h) {
  std::vector<std::int64_t> all(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
  return grad_check_impl(f, x, h, all);
}

GradCheckResult grad_check_sampled(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
    std::span<const std::int64_t> coordinates) {
  return grad_check_impl(f, x, h, coordinates);
}

}  // namespace r2m
