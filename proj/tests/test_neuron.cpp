// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/neuron.hpp"
#include "resformer/verification.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace resformer;

TEST(LifStep, SupraThresholdInputFiresAndResets) {
  const LIFParams p{2.0, 1.0, 0.0};
  const LifStep<double> r = lif_step(resting_state<double>({1}, p), Tensor<double>({1}, 2.0), p);
  EXPECT_DOUBLE_EQ(r.v[0], 1.0);
  EXPECT_DOUBLE_EQ(r.s.values()[0], 1.0);
  EXPECT_DOUBLE_EQ(r.next.u[0], 0.0);
}

TEST(LifStep, RestingFixedPoint) {
  const LIFParams p{2.0, 1.0, -0.2};
  const LifStep<double> r = lif_step(resting_state<double>({3}, p), Tensor<double>({3}, 0.0), p);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(r.v[i], -0.2);
    EXPECT_DOUBLE_EQ(r.s.values()[i], 0.0);
    EXPECT_DOUBLE_EQ(r.next.u[i], -0.2);
  }
}

TEST(LifStep, SubThresholdChargeIsKept) {
  const LIFParams p{1.0, 1.0, 0.0};
  const LifStep<double> r = lif_step(resting_state<double>({1}, p), Tensor<double>({1}, 0.5), p);
  EXPECT_DOUBLE_EQ(r.v[0], 0.5);
  EXPECT_DOUBLE_EQ(r.s.values()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.next.u[0], 0.5);
}

TEST(LifStep, LeakFollowsChargingEquation) {
  // v = u + (I - (u - u_rest)) / tau, evaluated by hand for a non-resting state.
  const LIFParams p{4.0, 10.0, 0.5};
  NeuronState<double> s{Tensor<double>({2}, {1.5, -0.5})};
  const LifStep<double> r = lif_step(s, Tensor<double>({2}, {2.0, 1.0}), p);
  EXPECT_DOUBLE_EQ(r.v[0], 1.5 + (2.0 - 1.0) / 4.0);
  EXPECT_DOUBLE_EQ(r.v[1], -0.5 + (1.0 + 1.0) / 4.0);
}

TEST(LifParams, RejectsNonPositiveTau) {
  EXPECT_THROW((LIFParams{0.0, 1.0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((LIFParams{2.0, -1.0, 0.0}.validate()), ConfigError);
}

TEST(SnForward, ZeroCurrentNeverFires) {
  const SpikeTensor<double> s = sn_forward(Tensor<double>({4, 3, 2}), LIFParams{});
  EXPECT_EQ(s.spike_count(), 0);
}

TEST(SnForward, CurrentOfTauTimesThresholdFiresEveryStep) {
  const LIFParams p{2.0, 1.0, 0.0};
  const SpikeTensor<double> s = sn_forward(Tensor<double>({5, 4}, p.tau * p.u_th), p);
  EXPECT_EQ(s.spike_count(), 20);
}

TEST(SnForward, SingleStepEqualsLifStep) {
  std::mt19937_64 rng(1);
  const LIFParams p{};
  const Tensor<double> current = testing_util::normal({1, 6}, rng, 2.0);
  const SpikeTensor<double> s = sn_forward(current, p);
  const LifStep<double> r = lif_step(resting_state<double>({6}, p), current.reshaped({6}), p);
  for (Index i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(s.values()[i], r.s.values()[i]);
}

TEST(SnForward, MatchesHandRecursion) {
  // tau 2: u_1 = 0.8 (I 1.6, no spike); v_2 = 0.8 + (1.6 - 0.8) / 2 = 1.2 fires.
  const SpikeTensor<double> s = sn_forward(Tensor<double>({3, 1}, {1.6, 1.6, 1.6}), LIFParams{});
  EXPECT_DOUBLE_EQ(s.values()[0], 0.0);
  EXPECT_DOUBLE_EQ(s.values()[1], 1.0);
  EXPECT_DOUBLE_EQ(s.values()[2], 0.0);
}

TEST(Surrogate, PeaksAtThreshold) {
  const LIFParams p{};
  for (const SurrogateKind kind : {SurrogateKind::triangular, SurrogateKind::sigmoid_derivative}) {
    const SurrogateSpec spec{kind, 0.8};
    const Tensor<double> g = surrogate_grad(Tensor<double>({5}, {0.2, 0.7, 1.0, 1.3, 1.8}), p, spec);
    EXPECT_NEAR(g[2], 1.0 / spec.width, 1e-12);
    for (Index i = 0; i < 5; ++i) EXPECT_LE(g[i], g[2]);
  }
}

TEST(Surrogate, TriangularHasCompactSupport) {
  const SurrogateSpec spec{SurrogateKind::triangular, 0.5};
  const Tensor<double> g = surrogate_grad(Tensor<double>({4}, {0.5, 1.5, 0.2, 2.0}), LIFParams{}, spec);
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], 0.0);
}

TEST(Surrogate, DensitiesIntegrateToOne) {
  // Composite Simpson rule over a window wide enough for both kinds.
  for (const SurrogateKind kind : {SurrogateKind::triangular, SurrogateKind::sigmoid_derivative}) {
    const SurrogateSpec spec{kind, 1.0};
    const double a = -20, b = 20;
    const int n = 40000;
    const double h = (b - a) / n;
    double sum = surrogate_density(a, spec) + surrogate_density(b, spec);
    for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * surrogate_density(a + i * h, spec);
    EXPECT_NEAR(sum * h / 3.0, 1.0, 1e-6);
  }
}

TEST(Surrogate, StepIsPrimitiveOfDensity) {
  for (const SurrogateKind kind : {SurrogateKind::triangular, SurrogateKind::sigmoid_derivative}) {
    const SurrogateSpec spec{kind, 1.0};
    for (const double x : {-0.7, -0.2, 0.1, 0.45}) {
      const double h = 1e-6;
      EXPECT_NEAR((surrogate_step(x + h, spec) - surrogate_step(x - h, spec)) / (2 * h), surrogate_density(x, spec),
                  1e-6);
    }
    EXPECT_NEAR(surrogate_step(-30, spec), 0.0, 1e-9);
    EXPECT_NEAR(surrogate_step(30, spec), 1.0, 1e-9);
  }
}

TEST(SpikingNeuron, SingleStepGradientIsSurrogateOverTau) {
  // With T = 1 and a resting start, v = I / tau, so ds/dI = phi(v - u_th) / tau.
  const LIFParams p{};
  const SurrogateSpec spec{};
  Parameter<double> current("current", Tensor<double>({1, 4}, {1.2, 1.9, 2.6, 0.1}));
  const Var<double> s = spiking_neuron(current.var(), 1, p, spec);
  backward(weighted_sum(s, Tensor<double>({1, 4}, 1.0)));
  for (Index i = 0; i < 4; ++i) {
    const double v = current.value()[i] / p.tau;
    EXPECT_NEAR(current.grad()[i], surrogate_density(v - p.u_th, spec) / p.tau, 1e-12);
    EXPECT_DOUBLE_EQ(s.value()[i], v >= p.u_th ? 1.0 : 0.0);
  }
}

TEST(SpikingNeuron, SmoothedModeGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Parameter<double> current("current", testing_util::normal({3 * 2, 5}, rng, 1.5));
  const Tensor<double> probe = testing_util::normal({6, 5}, rng);
  const SurrogateSpec spec{SurrogateKind::sigmoid_derivative, 1.0};
  GradcheckOptions opts;
  opts.coords = 30;
  opts.step = 1e-5;
  const GradcheckReport r = gradcheck(
      "smoothed_neuron", {&current},
      [&] { return weighted_sum(spiking_neuron(current.var(), 3, LIFParams{}, spec, NeuronMode::smoothed), probe); },
      opts);
  EXPECT_TRUE(r.pass) << "max rel error " << r.max_rel_error;
}

TEST(SpikingNeuron, SpikingModeOutputIsBinary) {
  std::mt19937_64 rng(3);
  const Var<double> current(testing_util::normal({4 * 3, 7}, rng, 2.0));
  const Var<double> s = spiking_neuron(current, 4, LIFParams{}, SurrogateSpec{});
  EXPECT_TRUE(((s.value().array() == 0.0) || (s.value().array() == 1.0)).all());
  // Identical to the reference recursion on the same currents.
  const SpikeTensor<double> ref = sn_forward(current.value().reshaped({4, 3, 7}), LIFParams{});
  EXPECT_EQ(testing_util::max_abs_diff(s.value().reshaped({4, 3, 7}), ref.values()), 0.0);
}
