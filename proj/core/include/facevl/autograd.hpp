// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "facevl/tensor.hpp"

// Reverse-mode automatic differentiation over 2-D tensors.
//
// A Var is a handle to a graph node. Operations on Vars record their inputs
// and a backward closure while gradient recording is enabled (the default);
// under a NoGradGuard they only compute values. backward() walks the graph in
// reverse topological order and accumulates into every node that requires a
// gradient, including intermediates, so activations can be inspected after
// the pass (Grad-CAM reads them).
namespace facevl::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
  bool has_grad() const noexcept { return !grad.empty(); }
};

class Var {
 public:
  Var() = default;
  /// Leaf holding `value`. Parameters pass requires_grad = true.
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var parameter(Tensor value) { return Var(std::move(value), true); }
  static Var constant(Tensor value) { return Var(std::move(value), false); }

  const Tensor& value() const { return node_->value; }
  /// Direct write access for optimizers and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  /// Accumulated gradient; zeros of the value's shape when none was recorded.
  Tensor grad() const;
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad();
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for the lifetime of the guard (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Back-propagates from a 1x1 root. Gradients accumulate; call zero_grad on
/// parameters between steps.
void backward(const Var& root);

/// Builds an op result. `fn` runs during backward with the result node and
/// is only retained when some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

// ---- elementwise / shape-preserving --------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// a * s where s is 1x1.
Var scale_by(const Var& a, const Var& s);
Var neg(const Var& a);
Var exp(const Var& a);
Var relu(const Var& a);
/// Exact (erf) GELU.
Var gelu(const Var& a);
/// a + row broadcast over every row (row is 1xC).
Var add_row(const Var& a, const Var& row);

// ---- linear algebra --------------------------------------------------------
Var matmul(const Var& a, const Var& b);
/// a * b^T.
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

// ---- row-wise -------------------------------------------------------------
/// Layer normalisation over each row; gamma/beta (1xC) may be empty Vars.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Softmax over each row. With `causal`, entry (i, j > i) is excluded.
Var softmax_rows(const Var& x, bool causal = false);
Var log_softmax_rows(const Var& x);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// ---- reductions -------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over rows -> 1xC.
Var mean_rows(const Var& a);
/// Per-column max over rows -> 1xC; ties route the gradient to the first row.
Var max_rows(const Var& a);
/// out(i,0) = a(i, index[i]).
Var pick(const Var& a, std::span<const std::size_t> index);

// ---- slicing / assembly ---------------------------------------------------
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::span<const std::size_t> index);
/// Copy of `a` with rows listed in `index` replaced by the 1xC `row`.
Var replace_rows(const Var& a, std::span<const std::size_t> index, const Var& row);

/// Fixed sparse linear map over rows: out_i = sum_k w_ik * a_{src_ik}.
/// Used for resampling and pooling of spatial maps stored as pixels x channels.
struct RowMap {
  struct Tap {
    std::size_t source;
    double weight;
  };
  std::size_t source_rows = 0;
  std::vector<std::vector<Tap>> taps;
};
Var apply_row_map(const Var& a, const RowMap& map);

/// 3x3 zero-padded neighbourhood unfold of a height x width map (pixels x C)
/// into pixels x 9C, ordered (dy, dx, channel).
Var im2col3x3(const Var& a, std::size_t height, std::size_t width);

// ---- losses -----------------------------------------------------------------
/// Mean binary cross-entropy with logits against {0,1} targets of equal shape.
Var bce_with_logits(const Var& logits, const Tensor& targets);

}  // namespace facevl::ag
