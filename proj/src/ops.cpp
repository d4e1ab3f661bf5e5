// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/ops.hpp"

#include <cmath>
#include <limits>

namespace resformer {

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

struct ConvDims {
  Index batch, in_channels, height, width;
  Index out_channels, group_in, kh, kw;
  Index out_h, out_w;
  Index group_out() const { return out_channels / groups; }
  Index patch() const { return group_in * kh * kw; }
  Index pixels() const { return out_h * out_w; }
  Index groups;
  bool pointwise;
};

ConvDims check_conv(const Shape& input, const Shape& kernel, const Conv2dGeometry& g) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError("conv2d expects input [B,C,H,W] and kernel [O,I,h,w], got " + to_string(input) +
                         " and " + to_string(kernel));
  }
  if (g.groups < 1 || g.stride < 1 || g.padding < 0) throw ConfigError("conv2d: invalid stride/padding/groups");
  ConvDims d{};
  d.batch = input[0];
  d.in_channels = input[1];
  d.height = input[2];
  d.width = input[3];
  d.out_channels = kernel[0];
  d.group_in = kernel[1];
  d.kh = kernel[2];
  d.kw = kernel[3];
  d.groups = g.groups;
  if (d.in_channels % g.groups != 0 || d.out_channels % g.groups != 0) {
    throw ConfigError("conv2d: channels " + std::to_string(d.in_channels) + "->" + std::to_string(d.out_channels) +
                      " not divisible by groups " + std::to_string(g.groups));
  }
  require(d.group_in * g.groups == d.in_channels,
          "conv2d: kernel " + to_string(kernel) + " does not match input " + to_string(input));
  require(d.height + 2 * g.padding >= d.kh && d.width + 2 * g.padding >= d.kw,
          "conv2d: kernel " + to_string(kernel) + " larger than padded input " + to_string(input));
  d.out_h = conv_output_extent(d.height, d.kh, g.stride, g.padding);
  d.out_w = conv_output_extent(d.width, d.kw, g.stride, g.padding);
  d.pointwise = d.kh == 1 && d.kw == 1 && g.stride == 1 && g.padding == 0;
  return d;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Scalar* image, Index channels, Index height, Index width, Index kh,
                Index kw, Index stride, Index padding) {
  const Index out_h = conv_output_extent(height, kh, stride, padding);
  const Index out_w = conv_output_extent(width, kw, stride, padding);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Scalar* row = cols.data() + ((c * kh + ky) * kw + kx) * out_h * out_w;
        Scalar* plane = image + c * height * width;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= width) continue;
            plane[iy * width + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Index conv_output_extent(Index input, Index kernel, Index stride, Index padding) {
  if (stride < 1 || padding < 0 || kernel < 1 || input + 2 * padding < kernel) {
    throw DimensionError("conv: kernel " + std::to_string(kernel) + " does not fit input " + std::to_string(input) +
                         " with padding " + std::to_string(padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank()) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index r = a.rank();
  for (Index i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw DimensionError("matmul: batch axes differ in " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
  }
  const Index p = a.dim(r - 2), m = a.dim(r - 1), q = b.dim(r - 1);
  if (b.dim(r - 2) != m) {
    throw DimensionError("matmul: inner dimensions differ in " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(p);
  out_shape.push_back(q);
  Tensor<Scalar> out(out_shape);
  const Index batch = numel(Shape(a.shape().begin(), a.shape().end() - 2));
  for (Index i = 0; i < batch; ++i) {
    out.matrix(p, q, i * p * q).noalias() = a.matrix(p, m, i * p * m) * b.matrix(m, q, i * m * q);
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> im2col(const Scalar* image, Index channels, Index height, Index width, Index kh, Index kw,
                         Index stride, Index padding) {
  const Index out_h = conv_output_extent(height, kh, stride, padding);
  const Index out_w = conv_output_extent(width, kw, stride, padding);
  RowMatrix<Scalar> cols(channels * kh * kw, out_h * out_w);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = image + c * height * width;
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        Scalar* row = cols.data() + ((c * kh + ky) * kw + kx) * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - padding + ky;
          Scalar* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - padding + kx;
            dst[ox] = (ix < 0 || ix >= width) ? Scalar(0) : src[ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, const Conv2dGeometry& geometry) {
  const ConvDims d = check_conv(input.shape(), kernel.shape(), geometry);
  Tensor<Scalar> out({d.batch, d.out_channels, d.out_h, d.out_w});
  const Index go = d.group_out(), k = d.patch(), p = d.pixels();
  for (Index b = 0; b < d.batch; ++b) {
    for (Index g = 0; g < d.groups; ++g) {
      const Scalar* image = input.data() + (b * d.in_channels + g * d.group_in) * d.height * d.width;
      auto weights = kernel.matrix(go, k, g * go * k);
      auto result = out.matrix(go, p, (b * d.out_channels + g * go) * p);
      if (d.pointwise) {
        result.noalias() = weights * ConstMatrixMap<Scalar>(image, d.group_in, p);
      } else {
        result.noalias() =
            weights * im2col(image, d.group_in, d.height, d.width, d.kh, d.kw, geometry.stride, geometry.padding);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d_backward_input(const Tensor<Scalar>& grad_output, const Tensor<Scalar>& kernel,
                                     const Shape& input_shape, const Conv2dGeometry& geometry) {
  const ConvDims d = check_conv(input_shape, kernel.shape(), geometry);
  Tensor<Scalar> grad_input(input_shape);
  const Index go = d.group_out(), k = d.patch(), p = d.pixels();
  RowMatrix<Scalar> cols;
  for (Index b = 0; b < d.batch; ++b) {
    for (Index g = 0; g < d.groups; ++g) {
      Scalar* image = grad_input.data() + (b * d.in_channels + g * d.group_in) * d.height * d.width;
      auto weights = kernel.matrix(go, k, g * go * k);
      auto upstream = grad_output.matrix(go, p, (b * d.out_channels + g * go) * p);
      if (d.pointwise) {
        MatrixMap<Scalar>(image, d.group_in, p).noalias() = weights.transpose() * upstream;
      } else {
        cols.noalias() = weights.transpose() * upstream;
        col2im_add(cols, image, d.group_in, d.height, d.width, d.kh, d.kw, geometry.stride, geometry.padding);
      }
    }
  }
  return grad_input;
}

template <typename Scalar>
void conv2d_backward_kernel(const Tensor<Scalar>& grad_output, const Tensor<Scalar>& input,
                            const Conv2dGeometry& geometry, Tensor<Scalar>& grad_kernel) {
  const ConvDims d = check_conv(input.shape(), grad_kernel.shape(), geometry);
  const Index go = d.group_out(), k = d.patch(), p = d.pixels();
  for (Index b = 0; b < d.batch; ++b) {
    for (Index g = 0; g < d.groups; ++g) {
      const Scalar* image = input.data() + (b * d.in_channels + g * d.group_in) * d.height * d.width;
      auto upstream = grad_output.matrix(go, p, (b * d.out_channels + g * go) * p);
      auto weights = grad_kernel.matrix(go, k, g * go * k);
      if (d.pointwise) {
        weights.noalias() += upstream * ConstMatrixMap<Scalar>(image, d.group_in, p).transpose();
      } else {
        weights.noalias() +=
            upstream *
            im2col(image, d.group_in, d.height, d.width, d.kh, d.kw, geometry.stride, geometry.padding).transpose();
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& input, Index window, Index stride, Index padding,
                         std::vector<Index>* argmax) {
  if (window < 1 || stride < 1 || padding < 0) throw ConfigError("maxpool2d: invalid window/stride/padding");
  if (input.rank() != 4) throw DimensionError("maxpool2d expects [B,C,H,W], got " + to_string(input.shape()));
  const Index n = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < window || w + 2 * padding < window) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " larger than padded input " +
                         to_string(input.shape()));
  }
  const Index oh = conv_output_extent(h, window, stride, padding);
  const Index ow = conv_output_extent(w, window, stride, padding);
  Tensor<Scalar> out({input.dim(0), input.dim(1), oh, ow});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  for (Index c = 0; c < n; ++c) {
    const Scalar* plane = input.data() + c * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_index = -1;
        for (Index ky = 0; ky < window; ++ky) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < window; ++kx) {
            const Index ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            if (plane[iy * w + ix] > best || best_index < 0) {
              best = plane[iy * w + ix];
              best_index = c * h * w + iy * w + ix;
            }
          }
        }
        const Index o = (c * oh + oy) * ow + ox;
        out[o] = best;
        if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best_index;
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& input, BatchNormState<Scalar>& state, BatchNormCache<Scalar>* cache) {
  if (input.rank() < 2 || input.dim(1) != state.channels()) {
    throw DimensionError("batchnorm: input " + to_string(input.shape()) + " does not have " +
                         std::to_string(state.channels()) + " channels on axis 1");
  }
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Index outer = input.dim(0), channels = input.dim(1);
  const Index inner = input.size() / (outer * channels);
  const Index count = outer * inner;

  Array mean(channels), var(channels);
  if (state.mode == BatchNormMode::train) {
    mean.setZero();
    var.setZero();
    for (Index n = 0; n < outer; ++n) {
      for (Index c = 0; c < channels; ++c) {
        mean[c] += input.array().segment((n * channels + c) * inner, inner).sum();
      }
    }
    mean /= Scalar(count);
    for (Index n = 0; n < outer; ++n) {
      for (Index c = 0; c < channels; ++c) {
        var[c] += (input.array().segment((n * channels + c) * inner, inner) - mean[c]).square().sum();
      }
    }
    var /= Scalar(count);
    const Scalar unbiased = count > 1 ? Scalar(count) / Scalar(count - 1) : Scalar(1);
    state.running_mean.array() = (Scalar(1) - state.momentum) * state.running_mean.array() + state.momentum * mean;
    state.running_var.array() =
        (Scalar(1) - state.momentum) * state.running_var.array() + state.momentum * var * unbiased;
  } else {
    mean = state.running_mean.array();
    var = state.running_var.array();
  }

  const Array inv_std = (var + state.eps).rsqrt();
  Tensor<Scalar> out(input.shape());
  Tensor<Scalar> normalized;
  if (cache) normalized = Tensor<Scalar>(input.shape());
  for (Index n = 0; n < outer; ++n) {
    for (Index c = 0; c < channels; ++c) {
      const Index offset = (n * channels + c) * inner;
      const auto x_hat = (input.array().segment(offset, inner) - mean[c]) * inv_std[c];
      if (cache) {
        normalized.array().segment(offset, inner) = x_hat;
        out.array().segment(offset, inner) =
            normalized.array().segment(offset, inner) * state.gamma[c] + state.beta[c];
      } else {
        out.array().segment(offset, inner) = x_hat * state.gamma[c] + state.beta[c];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

template <typename Scalar>
FoldedConv<Scalar> fold_bn(const Tensor<Scalar>& kernel, const BatchNormState<Scalar>& state) {
  if (state.mode != BatchNormMode::eval) {
    throw ContractViolation("fold_bn requires batch norm statistics in eval mode");
  }
  if (kernel.rank() < 1 || kernel.dim(0) != state.channels()) {
    throw DimensionError("fold_bn: kernel " + to_string(kernel.shape()) + " does not have " +
                         std::to_string(state.channels()) + " output channels");
  }
  const Index out_channels = kernel.dim(0);
  const Index per_channel = kernel.size() / out_channels;
  const auto scale = (state.gamma.array() * (state.running_var.array() + state.eps).rsqrt()).eval();
  FoldedConv<Scalar> folded{kernel, Tensor<Scalar>({out_channels})};
  for (Index o = 0; o < out_channels; ++o) {
    folded.kernel.array().segment(o * per_channel, per_channel) *= scale[o];
  }
  folded.bias.array() = state.beta.array() - scale * state.running_mean.array();
  return folded;
}

#define RESFORMER_INSTANTIATE_OPS(S)                                                                          \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                             \
  template RowMatrix<S> im2col(const S*, Index, Index, Index, Index, Index, Index, Index);                   \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Conv2dGeometry&);                      \
  template Tensor<S> conv2d_backward_input(const Tensor<S>&, const Tensor<S>&, const Shape&,                 \
                                           const Conv2dGeometry&);                                          \
  template void conv2d_backward_kernel(const Tensor<S>&, const Tensor<S>&, const Conv2dGeometry&, Tensor<S>&); \
  template Tensor<S> maxpool2d(const Tensor<S>&, Index, Index, Index, std::vector<Index>*);                   \
  template Tensor<S> batchnorm(const Tensor<S>&, BatchNormState<S>&, BatchNormCache<S>*);                    \
  template FoldedConv<S> fold_bn(const Tensor<S>&, const BatchNormState<S>&);

RESFORMER_INSTANTIATE_OPS(float)
RESFORMER_INSTANTIATE_OPS(double)

}  // namespace resformer
