#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "r2m/errors.hpp"

namespace r2m {

class Tape;

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense 64-bit float array with shape, row-major. Immutable once built;
/// copies share the underlying buffer. A tensor optionally carries a handle
/// (tape, node id) into the tape that recorded it, which is how gradients
/// find their way back to it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<double> data, Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const {
    return data_ ? static_cast<std::int64_t>(data_->size()) : 0;
  }
  const std::vector<double>& data() const& { return *data_; }
  /// Rvalue access copies out so iterating a temporary's data stays valid.
  std::vector<double> data() && { return *data_; }
  bool empty() const { return !data_; }

  /// Value of a one-element tensor.
  double value() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool tracked() const { return node_ >= 0; }
  std::int32_t node() const { return node_; }
  Tape* tape() const { return tape_; }

  /// Same values, no tape handle.
  Tensor detached() const;

 private:
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  Tape* tape_ = nullptr;
  std::int32_t node_ = -1;

  friend class Tape;
};

using BackwardFn = std::function<void(const std::vector<double>& upstream, Tape&)>;

/// Append-only record of operations for reverse-mode differentiation.
/// Node ids are assigned in creation order, so they are topologically
/// sorted by construction and backward() is a single reverse sweep.
/// A tape is single-threaded; run independent samples on separate tapes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Copies a value onto the tape as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  /// Assigns the next node id to `value`. `backward` receives the node's
  /// accumulated upstream gradient and adds into the input nodes' buffers.
  Tensor record(Tensor value, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Every call re-seeds and re-propagates
  /// from scratch, so repeated calls give identical gradients.
  void backward(const Tensor& loss);

  bool has_gradient(const Tensor& t) const;
  Tensor gradient(const Tensor& t) const;

  /// Accumulation buffer for a node, zero-initialized on first touch.
  std::vector<double>& grad_buffer(std::int32_t node);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    BackwardFn backward;  // empty for leaves
    Shape shape;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

namespace detail {
/// Tape shared by the tracked inputs (nullptr when all are constants).
/// Mixing tensors from different tapes is rejected.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);
void check_finite(const Tensor& t, const char* op);
}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations. Each computes a plain value when every input is
// untracked and records a backward closure otherwise.
// ---------------------------------------------------------------------------

/// 3D cross-correlation. input [C_in,D,H,W], weight [C_out,C_in,k,k,k] with k
/// odd, bias [C_out]. Output extent per axis must be exact:
/// (extent + 2*padding - k) divisible by stride.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);

/// Reference path for conv3d: plain nested loops, no GEMM. Same contract.
Tensor conv3d_direct(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride = 1, int padding = 0);

/// Per-window maximum over [C,D,H,W]. Gradient routes to the first argmax
/// voxel in scan order.
Tensor maxpool3d(const Tensor& input, int k = 2, int stride = 2);

/// Spatial mean per channel: [C,D,H,W] -> [C].
Tensor global_avg_pool(const Tensor& input);

/// Affine map: input [F], weight [G,F], bias [G] -> [G].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax over the last axis; each slice sums to 1.
Tensor softmax(const Tensor& x);

/// Multiplies every voxel of channel n by gate[n]. features [C,D,H,W],
/// gate [C].
Tensor channel_scale(const Tensor& features, const Tensor& gate);

/// -log softmax(logits)[target], computed via log-sum-exp.
Tensor cross_entropy(const Tensor& logits, std::int64_t target_class);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum_all(const Tensor& a);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t worst_coordinate = -1;
};

/// Caps the BLAS thread count behind conv3d and, when the host supports AVX2
/// but the BLAS runtime picked a generic kernel set, steers OpenBLAS to its
/// Haswell kernels (the OPENBLAS_CORETYPE environment variable wins if set).
/// Call once per process before the first tensor op or worker thread.
void set_blas_threads(int n);

/// Central finite differences against the tape gradient. `f` must map a
/// (tracked or plain) tensor to a scalar tensor and be deterministic.
/// Error metric per coordinate: |analytic - numeric| / max(1, |analytic|).
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double h);

/// Same check restricted to the given coordinates.
GradCheckResult grad_check_sampled(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
    std::span<const std::int64_t> coordinates);

}  // namespace r2m
