// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/tensor.hpp"

#include <vector>

namespace resformer {

/// Batched matrix product. Both operands have rank >= 2; any leading axes
/// must be identical and are treated as a batch.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

struct Conv2dGeometry {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

/// Output spatial extent for one axis.
Index conv_output_extent(Index input, Index kernel, Index stride, Index padding);

/// input [B, C_in, H, W], kernel [C_out, C_in / groups, kh, kw].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, const Conv2dGeometry& geometry = {});

template <typename Scalar>
Tensor<Scalar> conv2d_backward_input(const Tensor<Scalar>& grad_output, const Tensor<Scalar>& kernel,
                                     const Shape& input_shape, const Conv2dGeometry& geometry);

/// Accumulates into `grad_kernel`.
template <typename Scalar>
void conv2d_backward_kernel(const Tensor<Scalar>& grad_output, const Tensor<Scalar>& input,
                            const Conv2dGeometry& geometry, Tensor<Scalar>& grad_kernel);

/// Unfolds one sample/group into a [C_in_group * kh * kw, H_out * W_out] matrix.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Scalar* image, Index channels, Index height, Index width, Index kh, Index kw,
                         Index stride, Index padding);

/// Max pooling with implicit -inf padding. `argmax` (optional) receives the
/// flat input index chosen for every output element.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& input, Index window, Index stride, Index padding = 0,
                         std::vector<Index>* argmax = nullptr);

enum class BatchNormMode { train, eval };

/// Per-channel affine parameters and running statistics.
template <typename Scalar>
struct BatchNormState {
  BatchNormState() = default;
  explicit BatchNormState(Index channels)
      : gamma({channels}, Scalar(1)),
        beta({channels}, Scalar(0)),
        running_mean({channels}, Scalar(0)),
        running_var({channels}, Scalar(1)) {}

  Index channels() const { return gamma.size(); }

  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);
  BatchNormMode mode = BatchNormMode::train;
};

/// Intermediates kept for the backward pass.
template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;
};

/// Normalizes over every axis except axis 1. Train mode uses batch statistics
/// and updates the running estimates; eval mode uses the running estimates.
template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& input, BatchNormState<Scalar>& state,
                         BatchNormCache<Scalar>* cache = nullptr);

template <typename Scalar>
struct FoldedConv {
  Tensor<Scalar> kernel;
  Tensor<Scalar> bias;
};

/// Absorbs an eval-mode batch norm into the preceding (bias-free) convolution.
template <typename Scalar>
FoldedConv<Scalar> fold_bn(const Tensor<Scalar>& kernel, const BatchNormState<Scalar>& state);

}  // namespace resformer
