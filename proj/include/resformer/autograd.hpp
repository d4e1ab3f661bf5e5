// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/ops.hpp"
#include "resformer/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace resformer {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads `grad` of the node it is attached to and accumulates into inputs.
  std::function<void(Node&)> backward;

  /// Gradient storage, zero-initialized on first use.
  Tensor<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
};

/// Handle to a node of the recorded computation graph.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  using BackwardFn = std::function<void(Node<Scalar>&)>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false);

  /// Interior node. The backward closure is recorded only when gradients are
  /// enabled and some input requires them.
  static Var record(Tensor<Scalar> value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Named trainable tensor with a gradient slot of identical shape.
template <typename Scalar>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<Scalar> value, bool decay = true);

  const std::string& name() const { return name_; }
  Tensor<Scalar>& value() { return var_.mutable_value(); }
  const Tensor<Scalar>& value() const { return var_.value(); }
  Tensor<Scalar>& grad() { return var_.node()->grad_buffer(); }
  const Var<Scalar>& var() const { return var_; }
  /// Whether decoupled weight decay applies (conv/linear weights only).
  bool decay() const { return decay_; }
  void zero_grad() { grad().set_zero(); }

 private:
  std::string name_;
  Var<Scalar> var_;
  bool decay_ = true;
};

struct BackwardReport {
  Index nodes_visited = 0;
  Index leaves_reached = 0;
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are reset at the start of every sweep.
template <typename Scalar>
BackwardReport backward(const Var<Scalar>& loss);

// Differentiable operations.

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);

/// Batched product over [G, r, c] operands with optional transposition.
template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_a = false, bool transpose_b = false);

/// Plain [r, k] x [k, c] products are routed through bmm with one group.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.value().rank() == 2 && b.value().rank() == 2) {
    const Index rows = a.value().dim(0), cols = b.value().dim(1);
    const Var<Scalar> product =
        bmm(reshape(a, {1, rows, a.value().dim(1)}), reshape(b, {1, b.value().dim(0), cols}));
    return reshape(product, {rows, cols});
  }
  return bmm(a, b);
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Conv2dGeometry& geometry);

template <typename Scalar>
Var<Scalar> maxpool2d(const Var<Scalar>& input, Index window, Index stride, Index padding);

/// Batch norm with learnable affine; `state` carries running statistics and mode.
template <typename Scalar>
Var<Scalar> batchnorm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                      BatchNormState<Scalar>& state);

/// Views `input` as [outer, parts, inner] and returns slice `part` as [outer, inner].
template <typename Scalar>
Var<Scalar> select_part(const Var<Scalar>& input, Index outer, Index parts, Index part);

/// [N, C, H, W] -> [N, C]
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& input);

/// x [N, in] * w^T [in, out] + b -> [N, out]
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias);

/// [T * B, K] laid out time-major -> mean over T, [B, K].
template <typename Scalar>
Var<Scalar> time_mean(const Var<Scalar>& input, Index time_steps);

/// Mean softmax cross-entropy of logits [B, K].
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels);

/// Sum of input * weights (weights are constants).
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& input, const Tensor<Scalar>& weights);

}  // namespace resformer
