// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/ffn.hpp"

namespace resformer {

void GWSFFNConfig::validate() const {
  if (dim <= 0 || ratio <= 0 || group_width <= 0) throw ConfigError("GWSFFN: sizes must be positive");
  if (hidden() % group_width != 0) {
    throw ConfigError("GWSFFN: hidden width " + std::to_string(hidden()) + " not divisible by group width " +
                      std::to_string(group_width));
  }
}

template <typename Scalar>
FeedForwardLayer<Scalar>::FeedForwardLayer(const std::string& name, Index in_channels, Index out_channels,
                                           std::mt19937_64& rng)
    : sn(name + ".sn"), conv(name + ".conv", in_channels, out_channels, 1, {}, rng), bn(name + ".bn", out_channels) {}

template <typename Scalar>
Var<Scalar> FeedForwardLayer<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx) {
  return bn.forward(conv.forward(sn.forward(input, ctx), ctx), ctx);
}

template <typename Scalar>
void FeedForwardLayer<Scalar>::collect(StateRefs<Scalar>& refs) {
  conv.collect(refs);
  bn.collect(refs);
}

template <typename Scalar>
GWSFFN<Scalar>::GWSFFN(const std::string& name, const GWSFFNConfig& config_, std::mt19937_64& rng)
    : config((config_.validate(), config_)),
      expand(name + ".ffl1", config_.dim, config_.hidden(), rng),
      sn_group(name + ".gwl.sn"),
      group_conv(name + ".gwl.conv", config_.hidden(), config_.hidden(), 3, {1, 1, config_.groups()}, rng),
      bn_group(name + ".gwl.bn", config_.hidden()),
      reduce(name + ".ffl2", config_.hidden(), config_.dim, rng) {}

template <typename Scalar>
Var<Scalar> GWSFFN<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx) {
  const Var<Scalar> hidden = expand.forward(input, ctx);
  const Var<Scalar> grouped = bn_group.forward(group_conv.forward(sn_group.forward(hidden, ctx), ctx), ctx) + hidden;
  return reduce.forward(grouped, ctx);
}

template <typename Scalar>
void GWSFFN<Scalar>::collect(StateRefs<Scalar>& refs) {
  expand.collect(refs);
  group_conv.collect(refs);
  bn_group.collect(refs);
  reduce.collect(refs);
}

template class FeedForwardLayer<float>;
template class FeedForwardLayer<double>;
template class GWSFFN<float>;
template class GWSFFN<double>;

}  // namespace resformer
