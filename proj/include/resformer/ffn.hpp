// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/layers.hpp"

#include <random>
#include <string>

namespace resformer {

struct GWSFFNConfig {
  Index dim = 0;
  Index ratio = 4;
  Index group_width = 64;

  Index hidden() const { return dim * ratio; }
  Index groups() const { return hidden() / group_width; }
  void validate() const;
};

/// BN(Conv1x1(SN(X)))
template <typename Scalar>
class FeedForwardLayer {
 public:
  FeedForwardLayer() = default;
  FeedForwardLayer(const std::string& name, Index in_channels, Index out_channels, std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx);
  void collect(StateRefs<Scalar>& refs);

  SpikingLayer<Scalar> sn;
  Conv2d<Scalar> conv;
  BatchNorm2d<Scalar> bn;
};

/// Feed-forward block with a grouped 3x3 convolution between two pointwise
/// layers: FFL2(GWL(FFL1(X))), where GWL(X) = BN(GWConv(SN(X))) + X.
template <typename Scalar>
class GWSFFN {
 public:
  GWSFFN() = default;
  GWSFFN(const std::string& name, const GWSFFNConfig& config, std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx);
  void collect(StateRefs<Scalar>& refs);

  GWSFFNConfig config;
  FeedForwardLayer<Scalar> expand;
  SpikingLayer<Scalar> sn_group;
  Conv2d<Scalar> group_conv;
  BatchNorm2d<Scalar> bn_group;
  FeedForwardLayer<Scalar> reduce;
};

}  // namespace resformer
