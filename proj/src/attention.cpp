// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/attention.hpp"

#include <algorithm>
#include <cmath>

namespace resformer {

void DSSAConfig::validate() const {
  if (dim <= 0 || height <= 0 || width <= 0) throw ConfigError("DSSA: dimensions must be positive");
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("DSSA: embedding dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (patch <= 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("DSSA: spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by patch size " + std::to_string(patch));
  }
}

FiringRateEMA update_rate(const FiringRateEMA& ema, double batch_rate) {
  if (!(batch_rate >= 0.0 && batch_rate <= 1.0)) {
    throw ContractViolation("firing rate " + std::to_string(batch_rate) + " outside [0, 1]");
  }
  FiringRateEMA next = ema;
  next.value = ema.initialized ? ema.momentum * ema.value + (1.0 - ema.momentum) * batch_rate : batch_rate;
  next.initialized = true;
  return next;
}

double resolve_rate(FiringRateEMA& ema, double batch_rate, bool update) {
  if (update) ema = update_rate(ema, batch_rate);
  return ema.initialized ? ema.value : batch_rate;
}

namespace {

void check_rate(double rate, const char* what) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ContractViolation(std::string(what) + ": firing rate " + std::to_string(rate) + " outside [0, 1]");
  }
}

}  // namespace

double scale_c1(double rate_x, Index dim) {
  check_rate(rate_x, "scale_c1");
  return 1.0 / std::sqrt(std::max(rate_x, kRateFloor) * static_cast<double>(dim));
}

double scale_c2(double rate_attn, Index tokens, Index patch) {
  check_rate(rate_attn, "scale_c2");
  const double reduced = static_cast<double>(tokens) / static_cast<double>(patch * patch);
  return 1.0 / std::sqrt(std::max(rate_attn, kRateFloor) * reduced);
}

double sdsa_scale(double rate_q, double rate_k, Index tokens) {
  check_rate(rate_q, "sdsa_scale");
  check_rate(rate_k, "sdsa_scale");
  const double joint = std::max(rate_q, kRateFloor) * std::max(rate_k, kRateFloor);
  const double var = std::max(joint * (1.0 - joint), kRateFloor);
  return 1.0 / std::sqrt(static_cast<double>(tokens) * var);
}

namespace {

template <typename Scalar>
void require_rank3(const SpikeTensor<Scalar>& t, const char* what) {
  if (t.values().rank() != 3) throw DimensionError(std::string(what) + " must be [T, rows, cols]");
}

template <typename Scalar>
Tensor<Scalar> broadcast_time(const Tensor<Scalar>& weight, Index steps) {
  Tensor<Scalar> out({steps, weight.dim(0), weight.dim(1)});
  for (Index t = 0; t < steps; ++t) out.array().segment(t * weight.size(), weight.size()) = weight.array();
  return out;
}

template <typename Scalar>
Tensor<Scalar> transpose_last(const Tensor<Scalar>& t) {
  const Index g = t.dim(0), r = t.dim(1), c = t.dim(2);
  Tensor<Scalar> out({g, c, r});
  for (Index i = 0; i < g; ++i) out.matrix(c, r, i * r * c) = t.matrix(r, c, i * r * c).transpose();
  return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> dst(const SpikeTensor<Scalar>& x, const SpikeTensor<Scalar>& y, const Tensor<Scalar>& weight) {
  require_rank3(x, "dst: X");
  require_rank3(y, "dst: Y");
  const Index q = y.values().dim(2);
  if (weight.rank() != 2 || weight.dim(0) != q || weight.dim(1) != q) {
    throw DimensionError("dst: weight " + to_string(weight.shape()) + " must be [" + std::to_string(q) + ", " +
                         std::to_string(q) + "]");
  }
  if (x.time_steps() != y.time_steps()) throw DimensionError("dst: X and Y differ in time steps");
  return matmul(matmul(x.values(), y.values()), broadcast_time(weight, x.time_steps()));
}

template <typename Scalar>
Tensor<Scalar> dst_t(const SpikeTensor<Scalar>& x, const SpikeTensor<Scalar>& y, const Tensor<Scalar>& weight) {
  require_rank3(x, "dst_t: X");
  require_rank3(y, "dst_t: Y");
  const Index m = x.values().dim(2);
  if (weight.rank() != 2 || weight.dim(0) != m || weight.dim(1) != m) {
    throw DimensionError("dst_t: weight " + to_string(weight.shape()) + " must be [" + std::to_string(m) + ", " +
                         std::to_string(m) + "]");
  }
  if (x.time_steps() != y.time_steps()) throw DimensionError("dst_t: X and Y differ in time steps");
  if (y.values().dim(2) != m) throw DimensionError("dst_t: Y must share the last axis with X");
  Tensor<Scalar> w_t(weight.shape());
  w_t.matrix(m, m) = weight.matrix(m, m).transpose();
  return matmul(matmul(x.values(), broadcast_time(w_t, x.time_steps())), transpose_last(y.values()));
}

template <typename Scalar>
Tensor<Scalar> PatchTransform<Scalar>::apply(const Tensor<Scalar>& tokens, Index height, Index width) {
  if (tokens.rank() != 3 || tokens.dim(1) != height * width) {
    throw DimensionError("PatchTransform: tokens " + to_string(tokens.shape()) + " do not cover " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const Index p = patch();
  const Index steps = tokens.dim(0), d = tokens.dim(2);
  if (kernel.rank() != 4 || kernel.dim(1) != d || kernel.dim(3) != p) {
    throw DimensionError("PatchTransform: kernel " + to_string(kernel.shape()) + " does not accept " +
                         std::to_string(d) + " channels");
  }
  const Tensor<Scalar> image = transpose_last(tokens).reshaped({steps, d, height, width});
  Tensor<Scalar> z = batchnorm(conv2d(image, kernel, {p, 0, 1}), bn);
  const Index d_out = z.dim(1), reduced = z.dim(2) * z.dim(3);
  return transpose_last(std::move(z).reshaped({steps, d_out, reduced}));
}

template <typename Scalar>
SpikeTensor<Scalar> attn_map(const SpikeTensor<Scalar>& x, const DSSAConfig& cfg, PatchTransform<Scalar>& f,
                             FiringRateEMA& rate_x, bool training, const LIFParams& lif) {
  cfg.validate();
  require_rank3(x, "attn_map: X");
  const Tensor<Scalar> z = f.apply(x.values(), cfg.height, cfg.width);
  Tensor<Scalar> current = matmul(x.values(), transpose_last(z));
  const double c1 = scale_c1(resolve_rate(rate_x, x.firing_rate(), training), cfg.head_dim());
  current.array() *= Scalar(c1);
  return sn_forward(current, lif);
}

template <typename Scalar>
SpikeTensor<Scalar> dssa(const SpikeTensor<Scalar>& x, const DSSAConfig& cfg, PatchTransform<Scalar>& f_attn,
                         PatchTransform<Scalar>& f_out, AttentionRates& rates, bool training, const LIFParams& lif) {
  const SpikeTensor<Scalar> attn = attn_map(x, cfg, f_attn, rates.x, training, lif);
  const Tensor<Scalar> z = f_out.apply(x.values(), cfg.height, cfg.width);
  Tensor<Scalar> current = matmul(attn.values(), z);
  const double c2 = scale_c2(resolve_rate(rates.attn, attn.firing_rate(), training), cfg.tokens(), cfg.patch);
  current.array() *= Scalar(c2);
  return sn_forward(current, lif);
}

template <typename Scalar>
MultiHeadDSSA<Scalar>::MultiHeadDSSA(std::string name_, Index dim_, Index heads_, Index patch_,
                                     std::mt19937_64& rng)
    : name(std::move(name_)),
      dim(dim_),
      heads(heads_),
      patch(patch_),
      sn_in(name + ".sn_in"),
      conv_p(name + ".conv_p", dim_, 2 * dim_, patch_, {patch_, 0, 1}, rng),
      bn_p(name + ".bn_p", 2 * dim_),
      sn_attn(name + ".sn_attn"),
      sn_out(name + ".sn_out"),
      proj(name + ".proj", dim_, dim_, 1, {}, rng),
      bn_proj(name + ".bn_proj", dim_) {
  DSSAConfig{dim, patch, patch, patch, heads}.validate();
}

template <typename Scalar>
Var<Scalar> MultiHeadDSSA<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx) {
  const Shape& shape = input.shape();
  if (shape.size() != 4 || shape[1] != dim) {
    throw DimensionError(name + ": expected [N, " + std::to_string(dim) + ", H, W], got " + to_string(shape));
  }
  const Index n = shape[0], height = shape[2], width = shape[3];
  const DSSAConfig cfg{dim, height, width, patch, heads};
  cfg.validate();
  const Index dh = cfg.head_dim(), hw = cfg.tokens(), reduced = cfg.reduced_tokens();
  const bool update = ctx.training && ctx.track_rates;

  const Var<Scalar> spikes = sn_in.forward(input, ctx);
  const Var<Scalar> z = bn_p.forward(conv_p.forward(spikes, ctx), ctx);
  const Var<Scalar> z_attn = reshape(select_part(z, n * heads, 2, 0), {n * heads, dh, reduced});
  const Var<Scalar> z_out = reshape(select_part(z, n * heads, 2, 1), {n * heads, dh, reduced});
  const Var<Scalar> s_heads = reshape(spikes, {n * heads, dh, hw});

  // Attention map kept transposed, [L, HW] per (sample, head).
  const Var<Scalar> attn_current = bmm(z_attn, s_heads, true, false);
  const double c1 = scale_c1(resolve_rate(rate_x, spikes.value().array().mean(), update), dh);
  const Var<Scalar> attn = sn_attn.forward(scale(attn_current, Scalar(c1)), ctx);

  const Var<Scalar> out_current = bmm(z_out, attn);
  const double c2 = scale_c2(resolve_rate(rate_attn, attn.value().array().mean(), update), hw, patch);
  const Var<Scalar> out = sn_out.forward(scale(out_current, Scalar(c2)), ctx);

  if (ctx.observer) report_dual_spikes(ctx, spikes.value(), attn.value(), attn_current.value(), out_current.value());
  return bn_proj.forward(proj.forward(reshape(out, {n, dim, height, width}), ctx), ctx);
}

template <typename Scalar>
void MultiHeadDSSA<Scalar>::report_dual_spikes(const RunContext<Scalar>& ctx, const Tensor<Scalar>& spikes,
                                               const Tensor<Scalar>& attn, const Tensor<Scalar>& attn_current,
                                               const Tensor<Scalar>& out_current) const {
  SynapseObserver<Scalar>& obs = *ctx.observer;
  const Index n = spikes.dim(0), height = spikes.dim(2), width = spikes.dim(3);
  const Index hw = height * width, dh = dim / heads, p = patch;
  const Index reduced = hw / (p * p);
  const Index patch_len = dim * p * p;

  // Spikes per patch token for every sample; each patch token sees all channels.
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic> patch_spikes(n, reduced);
  std::vector<RowMatrix<Scalar>> patches(n);
  for (Index s = 0; s < n; ++s) {
    patches[s] = im2col(spikes.data() + s * dim * hw, dim, height, width, p, p, p, 0).transpose();
    patch_spikes.row(s) = patches[s].template cast<double>().rowwise().sum().transpose().array();
  }

  DualSpikeCounts map_counts{DualSpikeForm::dst_t};
  map_counts.time_steps = ctx.time_steps;
  map_counts.gate_elements = spikes.size();
  DualSpikeCounts out_counts{DualSpikeForm::dst};
  out_counts.time_steps = ctx.time_steps;
  out_counts.gate_elements = attn.size();
  for (Index s = 0; s < n; ++s) {
    for (Index h = 0; h < heads; ++h) {
      const Index g = s * heads + h;
      const double x_spikes = spikes.array().segment(g * dh * hw, dh * hw).template cast<double>().sum();
      map_counts.gate_spikes += static_cast<Index>(x_spikes);
      map_counts.coincidences += x_spikes * patch_spikes.row(s).sum();
      // attn is [L, HW]: row j holds the gate spikes that read patch token j.
      const auto a = attn.matrix(reduced, hw, g * reduced * hw);
      for (Index j = 0; j < reduced; ++j) {
        const double col = a.row(j).template cast<double>().sum();
        out_counts.gate_spikes += static_cast<Index>(col);
        out_counts.coincidences += col * patch_spikes(s, j) * static_cast<double>(dh);
      }
    }
  }
  map_counts.fanout = map_counts.gate_spikes * reduced;
  out_counts.fanout = out_counts.gate_spikes * dh;
  obs.on_dual_spike_counts(name + ".attn", map_counts);
  obs.on_dual_spike_counts(name + ".out", out_counts);

  if (ctx.training || !obs.wants_dual_spike_detail()) return;
  const FoldedConv<Scalar> folded = fold_bn(conv_p.weight.value(), bn_p.state);
  const auto kernel = folded.kernel.matrix(2 * dim, patch_len);
  for (Index s = 0; s < n; ++s) {
    for (Index h = 0; h < heads; ++h) {
      const Index g = s * heads + h;
      for (Index part = 0; part < 2; ++part) {
        const Index row0 = (h * 2 + part) * dh;
        DualSpikeRecord<Scalar> rec;
        rec.layer = name + (part == 0 ? ".attn" : ".out");
        rec.form = part == 0 ? DualSpikeForm::dst_t : DualSpikeForm::dst;
        rec.patches = patches[s];
        rec.weight = kernel.middleRows(row0, dh).transpose();
        rec.bias = folded.bias.array().segment(row0, dh).matrix();
        if (part == 0) {
          rec.gate = spikes.matrix(dh, hw, g * dh * hw).transpose();
          rec.current = attn_current.matrix(reduced, hw, g * reduced * hw).transpose();
        } else {
          rec.gate = attn.matrix(reduced, hw, g * reduced * hw).transpose();
          rec.current = out_current.matrix(dh, hw, g * dh * hw).transpose();
        }
        obs.on_dual_spike(rec);
      }
    }
  }
}

template <typename Scalar>
void MultiHeadDSSA<Scalar>::collect(StateRefs<Scalar>& refs) {
  conv_p.collect(refs);
  bn_p.collect(refs);
  proj.collect(refs);
  bn_proj.collect(refs);
  refs.rates.emplace_back(name + ".rate_x", &rate_x);
  refs.rates.emplace_back(name + ".rate_attn", &rate_attn);
}

#define RESFORMER_INSTANTIATE_ATTENTION(S)                                                                   \
  template Tensor<S> dst(const SpikeTensor<S>&, const SpikeTensor<S>&, const Tensor<S>&);                   \
  template Tensor<S> dst_t(const SpikeTensor<S>&, const SpikeTensor<S>&, const Tensor<S>&);                 \
  template struct PatchTransform<S>;                                                                         \
  template SpikeTensor<S> attn_map(const SpikeTensor<S>&, const DSSAConfig&, PatchTransform<S>&,            \
                                   FiringRateEMA&, bool, const LIFParams&);                                  \
  template SpikeTensor<S> dssa(const SpikeTensor<S>&, const DSSAConfig&, PatchTransform<S>&,                \
                               PatchTransform<S>&, AttentionRates&, bool, const LIFParams&);                 \
  template class MultiHeadDSSA<S>;

RESFORMER_INSTANTIATE_ATTENTION(float)
RESFORMER_INSTANTIATE_ATTENTION(double)

}  // namespace resformer
