// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/ffn.hpp"
#include "resformer/neuron.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace resformer;

namespace {

Index count_params(StateRefs<double>& refs) {
  Index n = 0;
  for (Parameter<double>* p : refs.parameters) n += p->value().size();
  return n;
}

RunContext<double> eval_context(Index steps) {
  RunContext<double> ctx;
  ctx.time_steps = steps;
  return ctx;
}

}  // namespace

TEST(GwsffnConfig, HiddenWidthAndGroups) {
  const GWSFFNConfig cfg{64, 4, 64};
  EXPECT_EQ(cfg.hidden(), 256);
  EXPECT_EQ(cfg.groups(), 4);
  EXPECT_EQ((GWSFFNConfig{512, 4, 64}.groups()), 32);
  EXPECT_THROW((GWSFFNConfig{48, 1, 64}.validate()), ConfigError);
}

TEST(Gwsffn, ParameterCountClosedForm) {
  std::mt19937_64 rng(1);
  GWSFFN<double> ffn("ffn", GWSFFNConfig{64, 4, 64}, rng);
  StateRefs<double> refs;
  ffn.collect(refs);
  // Two point-wise layers, four 64-channel 3x3 groups, and BN affine pairs.
  const Index expected = 2 * (64 * 256) + 4 * (64 * 64 * 9) + 2 * 256 + 2 * 256 + 2 * 64;
  EXPECT_EQ(count_params(refs), expected);
}

TEST(FeedForwardLayer, IdentityWeightsGiveSpikePattern) {
  std::mt19937_64 rng(2);
  FeedForwardLayer<double> ffl("ffl", 5, 5, rng);
  ffl.conv.weight.value().set_zero();
  for (Index i = 0; i < 5; ++i) ffl.conv.weight.value()[i * 5 + i] = 1.0;
  ffl.bn.state.eps = 0;
  const Tensor<double> x = testing_util::normal({2 * 3, 5, 3, 3}, rng, 2.0);
  const Tensor<double> out = ffl.forward(Var<double>(x), eval_context(2)).value();
  const SpikeTensor<double> s = sn_forward(x.reshaped({2, 3 * 5 * 9}), LIFParams{});
  EXPECT_EQ(testing_util::max_abs_diff(out, s.values().reshaped(x.shape())), 0.0);
}

TEST(Gwsffn, ZeroGroupConvLeavesResidualPath) {
  std::mt19937_64 rng(3);
  GWSFFN<double> ffn("ffn", GWSFFNConfig{16, 4, 16}, rng);
  ffn.group_conv.weight.value().set_zero();
  ffn.bn_group.state.eps = 0;
  const Tensor<double> x = testing_util::normal({2, 16, 4, 4}, rng, 2.0);
  const RunContext<double> ctx = eval_context(2);
  const Tensor<double> out = ffn.forward(Var<double>(x), ctx).value();
  const Var<double> h = ffn.expand.forward(Var<double>(x), ctx);
  const Tensor<double> expected = ffn.reduce.forward(h, ctx).value();
  EXPECT_LT(testing_util::max_abs_diff(out, expected), 1e-12);
}

TEST(Gwsffn, CompositionOrderExpandGroupReduce) {
  // Marker weights: a group conv that only passes the centre tap scaled by 3.
  std::mt19937_64 rng(4);
  GWSFFN<double> ffn("ffn", GWSFFNConfig{8, 2, 8}, rng);
  Tensor<double>& k = ffn.group_conv.weight.value();
  k.set_zero();
  for (Index o = 0; o < 16; ++o) k.at({o, o % 8, 1, 1}) = 3.0;
  const Tensor<double> x = testing_util::normal({2, 8, 3, 3}, rng, 2.0);
  const RunContext<double> ctx = eval_context(2);
  const Tensor<double> out = ffn.forward(Var<double>(x), ctx).value();

  const Tensor<double> h = ffn.expand.forward(Var<double>(x), ctx).value();
  const Tensor<double> s = sn_forward(h.reshaped({2, h.size() / 2}), LIFParams{}).values().reshaped(h.shape());
  BatchNormState<double> bn = ffn.bn_group.state;
  bn.gamma = ffn.bn_group.gamma.value();
  bn.beta = ffn.bn_group.beta.value();
  bn.mode = BatchNormMode::eval;
  Tensor<double> g = batchnorm(conv2d(s, k, {1, 1, 2}), bn);
  g.array() += h.array();
  const Tensor<double> expected = ffn.reduce.forward(Var<double>(g), ctx).value();
  EXPECT_LT(testing_util::max_abs_diff(out, expected), 1e-12);
}

TEST(Gwsffn, SpatialShapePreserved) {
  std::mt19937_64 rng(5);
  for (const Index size : {3, 7, 14}) {
    GWSFFN<double> ffn("ffn", GWSFFNConfig{16, 4, 16}, rng);
    const Shape shape{2, 16, size, size};
    EXPECT_EQ(ffn.forward(Var<double>(testing_util::normal(shape, rng)), eval_context(1)).shape(), shape);
  }
}

TEST(Gwsffn, ZeroInputGivesReduceOffset) {
  std::mt19937_64 rng(6);
  GWSFFN<double> ffn("ffn", GWSFFNConfig{8, 4, 16}, rng);
  ffn.reduce.bn.beta.value() = testing_util::normal({8}, rng);
  const Tensor<double> out = ffn.forward(Var<double>(Tensor<double>({2, 8, 3, 3})), eval_context(2)).value();
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 8; ++c)
      for (Index i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out[(n * 8 + c) * 9 + i], ffn.reduce.bn.beta.value()[c]);
}
