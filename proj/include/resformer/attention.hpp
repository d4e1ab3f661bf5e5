// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/layers.hpp"
#include "resformer/neuron.hpp"
#include "resformer/ops.hpp"

#include <random>
#include <string>

namespace resformer {

/// Floor applied to firing rates inside every scaling factor.
inline constexpr double kRateFloor = 1e-4;
inline constexpr double kRateMomentum = 0.999;

struct DSSAConfig {
  Index dim = 0;
  Index height = 0;
  Index width = 0;
  Index patch = 1;
  Index heads = 1;

  Index tokens() const { return height * width; }
  Index reduced_tokens() const { return tokens() / (patch * patch); }
  Index head_dim() const { return dim / heads; }
  void validate() const;
};

/// Exponential moving average of a firing rate. The first observation sets
/// the value directly.
struct FiringRateEMA {
  double value = 0.0;
  double momentum = kRateMomentum;
  bool initialized = false;
};

FiringRateEMA update_rate(const FiringRateEMA& ema, double batch_rate);

/// Rate used by a scaling factor: updates the EMA first when `update` is set.
/// An EMA that has never observed data falls back to `batch_rate`.
double resolve_rate(FiringRateEMA& ema, double batch_rate, bool update);

/// 1 / sqrt(f_X * d)
double scale_c1(double rate_x, Index dim);
/// 1 / sqrt(f_Attn * HW / p^2)
double scale_c2(double rate_attn, Index tokens, Index patch);
/// 1 / sqrt(HW * f_Q * f_K * (1 - f_Q * f_K)), for a scaled spike-driven
/// self-attention (SDSA) variant.
double sdsa_scale(double rate_q, double rate_k, Index tokens);

/// X [T,p,m] * Y [T,m,q] * W [q,q].
template <typename Scalar>
Tensor<Scalar> dst(const SpikeTensor<Scalar>& x, const SpikeTensor<Scalar>& y, const Tensor<Scalar>& weight);

/// X [T,p,m] * W^T [m,m] * Y^T [m,q], with Y [T,q,m].
template <typename Scalar>
Tensor<Scalar> dst_t(const SpikeTensor<Scalar>& x, const SpikeTensor<Scalar>& y, const Tensor<Scalar>& weight);

/// BN(Conv_p(.)) applied to a token matrix. Kernel [d_out, d, p, p], stride p.
template <typename Scalar>
struct PatchTransform {
  Tensor<Scalar> kernel;
  BatchNormState<Scalar> bn;

  /// tokens [T, H*W, d] -> [T, H*W / p^2, d_out]
  Tensor<Scalar> apply(const Tensor<Scalar>& tokens, Index height, Index width);
  Index patch() const { return kernel.dim(2); }
};

struct AttentionRates {
  FiringRateEMA x;
  FiringRateEMA attn;
};

/// SN(DST_T(X, X; f) * c1) -> [T, HW, HW / p^2]
template <typename Scalar>
SpikeTensor<Scalar> attn_map(const SpikeTensor<Scalar>& x, const DSSAConfig& cfg, PatchTransform<Scalar>& f,
                             FiringRateEMA& rate_x, bool training, const LIFParams& lif = {});

/// SN(DST(AttnMap(X), X; f_out) * c2) with the attention map produced by
/// `f_attn`. Passing the same transform twice gives the single-f form.
template <typename Scalar>
SpikeTensor<Scalar> dssa(const SpikeTensor<Scalar>& x, const DSSAConfig& cfg, PatchTransform<Scalar>& f_attn,
                         PatchTransform<Scalar>& f_out, AttentionRates& rates, bool training,
                         const LIFParams& lif = {});

/// BN(Conv1([DSSA_i(SN(X))]_i)) on currents [T*B, C, H, W].
///
/// A single Conv_p maps C -> 2C channels. Its output is split into heads and
/// each head's slice into two halves: the first half feeds the attention map,
/// the second the output product.
template <typename Scalar>
class MultiHeadDSSA {
 public:
  MultiHeadDSSA() = default;
  MultiHeadDSSA(std::string name, Index dim, Index heads, Index patch, std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx);
  void collect(StateRefs<Scalar>& refs);

  std::string name;
  Index dim = 0;
  Index heads = 1;
  Index patch = 1;
  SpikingLayer<Scalar> sn_in;
  Conv2d<Scalar> conv_p;
  BatchNorm2d<Scalar> bn_p;
  SpikingLayer<Scalar> sn_attn;
  SpikingLayer<Scalar> sn_out;
  Conv2d<Scalar> proj;
  BatchNorm2d<Scalar> bn_proj;
  FiringRateEMA rate_x;
  FiringRateEMA rate_attn;

 private:
  void report_dual_spikes(const RunContext<Scalar>& ctx, const Tensor<Scalar>& spikes, const Tensor<Scalar>& attn,
                          const Tensor<Scalar>& attn_current, const Tensor<Scalar>& out_current) const;
};

}  // namespace resformer
