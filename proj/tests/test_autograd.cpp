// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/autograd.hpp"
#include "resformer/verification.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace resformer;

TEST(Autograd, LinearLossGradientIsOuterProduct) {
  // loss = sum(W x) over a [3, 4] weight and fixed x, so dL/dW[i, j] = x[j].
  std::mt19937_64 rng(1);
  Parameter<double> w("w", testing_util::normal({3, 4}, rng));
  const Tensor<double> x = testing_util::normal({4, 1}, rng);
  const Var<double> loss = weighted_sum(matmul(w.var(), Var<double>(x)), Tensor<double>({3, 1}, 1.0));
  backward(loss);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(w.grad()[i * 4 + j], x[j]);
}

TEST(Autograd, MatmulChainMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Parameter<double> a("a", testing_util::normal({3, 4}, rng));
  Parameter<double> b("b", testing_util::normal({4, 5}, rng));
  Parameter<double> c("c", testing_util::normal({5, 2}, rng));
  const Tensor<double> probe = testing_util::normal({3, 2}, rng);
  const auto loss = [&] { return weighted_sum(matmul(matmul(a.var(), b.var()), c.var()), probe); };
  GradcheckOptions opts;
  opts.coords = 30;
  opts.step = 1e-5;
  const GradcheckReport r = gradcheck("matmul_chain", {&a, &b, &c}, loss, opts);
  EXPECT_TRUE(r.pass);
  EXPECT_LE(r.max_rel_error, 1e-3);
}

TEST(Autograd, SecondBackwardDoublesLeafGradients) {
  std::mt19937_64 rng(3);
  Parameter<double> w("w", testing_util::normal({2, 3}, rng));
  const Tensor<double> x = testing_util::normal({3, 2}, rng);
  const Tensor<double> probe = testing_util::normal({2, 2}, rng);
  const Var<double> loss = weighted_sum(matmul(w.var(), Var<double>(x)), probe);
  w.zero_grad();
  backward(loss);
  const Tensor<double> once = w.grad();
  backward(loss);
  for (Index i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2 * once[i]);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  std::mt19937_64 rng(4);
  Parameter<double> w("w", testing_util::normal({2, 2}, rng));
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    const Var<double> y = matmul(w.var(), w.var());
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Autograd, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  Parameter<double> logits("logits", Tensor<double>({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0}));
  const std::vector<int> labels{1, 0};
  const Var<double> loss = cross_entropy(logits.var(), labels);
  backward(loss);
  double expected_loss = 0;
  for (Index n = 0; n < 2; ++n) {
    double z = 0;
    for (Index k = 0; k < 3; ++k) z += std::exp(logits.value()[n * 3 + k]);
    expected_loss -= std::log(std::exp(logits.value()[n * 3 + labels[static_cast<std::size_t>(n)]]) / z) / 2;
    for (Index k = 0; k < 3; ++k) {
      const double p = std::exp(logits.value()[n * 3 + k]) / z;
      const double onehot = k == labels[static_cast<std::size_t>(n)] ? 1.0 : 0.0;
      EXPECT_NEAR(logits.grad()[n * 3 + k], (p - onehot) / 2, 1e-12);
    }
  }
  EXPECT_NEAR(loss.value()[0], expected_loss, 1e-12);
}

TEST(Autograd, BatchNormAndConvGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  Parameter<double> k("k", testing_util::normal({4, 2, 3, 3}, rng, 0.5));
  Parameter<double> gamma("gamma", testing_util::normal({4}, rng), false);
  Parameter<double> beta("beta", testing_util::normal({4}, rng), false);
  const Var<double> x(testing_util::normal({3, 4, 5, 5}, rng));
  const Tensor<double> probe = testing_util::normal({3, 4, 3, 3}, rng);
  BatchNormState<double> state(4);
  const auto loss = [&] {
    return weighted_sum(batchnorm(conv2d(x, k.var(), {2, 1, 2}), gamma.var(), beta.var(), state), probe);
  };
  GradcheckOptions opts;
  opts.coords = 40;
  opts.step = 1e-5;
  const GradcheckReport r = gradcheck("conv_bn", {&k, &gamma, &beta}, loss, opts);
  EXPECT_TRUE(r.pass) << "max rel error " << r.max_rel_error;
}
