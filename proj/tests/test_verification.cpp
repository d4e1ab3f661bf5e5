// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/attention.hpp"
#include "resformer/verification.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace resformer;

namespace {

// Direct estimate of Var(sum_k x_k z_k) with its own sampler, independent of
// the library's matrix-product formulation.
double sampled_current_variance(double f_x, Index m, Index samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution bd(f_x);
  std::normal_distribution<double> nd;
  double sum = 0, sum_sq = 0;
  for (Index s = 0; s < samples; ++s) {
    double current = 0;
    for (Index k = 0; k < m; ++k) {
      const double z = nd(rng);
      if (bd(rng)) current += z;
    }
    sum += current;
    sum_sq += current * current;
  }
  const double mean = sum / samples;
  return sum_sq / samples - mean * mean;
}

}  // namespace

TEST(Theorem1, PredictionIsRateTimesWidth) {
  const MCReport r = theorem1_mc(0.5, 100, 100, 2000, ProductForm::dst, MCOptions{});
  EXPECT_DOUBLE_EQ(r.predicted_variance, 50.0);
  EXPECT_DOUBLE_EQ(r.predicted_mean, 0.0);
}

TEST(Theorem1, SampledVarianceMatchesIndependentSampler) {
  const double oracle = sampled_current_variance(0.1, 64, 40000, 99);
  EXPECT_NEAR(oracle, 6.4, 0.05 * 6.4);
  for (const ProductForm form : {ProductForm::dst, ProductForm::dst_t}) {
    const MCReport r = theorem1_mc(0.1, 64, 64, 40000, form, MCOptions{3});
    EXPECT_EQ(r.samples, 40000);
    EXPECT_NEAR(r.variance, oracle, 0.05 * oracle);
    EXPECT_TRUE(r.pass());
  }
}

TEST(Theorem1, RejectsDegenerateRates) {
  EXPECT_THROW(theorem1_mc(0.0, 8, 8, 100, ProductForm::dst, MCOptions{}), ContractViolation);
  EXPECT_THROW(theorem1_mc(1.0, 8, 8, 100, ProductForm::dst, MCOptions{}), ContractViolation);
}

TEST(Theorem1, ResultsDoNotDependOnWorkerCount) {
  MCOptions one{5, 1};
  MCOptions four{5, 4};
  const MCReport a = theorem1_mc(0.3, 64, 32, 5000, ProductForm::dst_t, one);
  const MCReport b = theorem1_mc(0.3, 64, 32, 5000, ProductForm::dst_t, four);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  EXPECT_EQ(to_jsonl(a), to_jsonl(b));
}

TEST(Scaling, PostScaleVarianceIsNearOne) {
  for (const Index m : {64, 128}) {
    const MCReport r = post_scale_variance(0.3, m, 20000, ProductForm::dst_t, MCOptions{7});
    EXPECT_GE(r.variance, 0.9);
    EXPECT_LE(r.variance, 1.1);
    EXPECT_EQ(r.variance_low, 0.9);
    EXPECT_EQ(r.variance_high, 1.1);
  }
}

TEST(Scaling, SecondProductScaleIsNearOne) {
  const MCReport r = c2_scale_variance(0.2, 196, 1, 20000, MCOptions{8});
  EXPECT_TRUE(r.pass()) << r.variance;
}

TEST(Sdsa, PredictedVarianceForHalfRates) {
  const MCReport r = sdsa_scale_mc(0.5, 0.5, 64, 20000, false, MCOptions{9});
  EXPECT_DOUBLE_EQ(r.predicted_variance, 12.0);
  EXPECT_NEAR(r.variance, 12.0, 0.05 * 12.0);
  const MCReport scaled = sdsa_scale_mc(0.5, 0.5, 64, 20000, true, MCOptions{9});
  EXPECT_TRUE(scaled.pass()) << scaled.variance;
}

TEST(Sdsa, VanishingQueryRateSilencesTheSum) {
  const MCReport r = sdsa_scale_mc(1e-4, 0.5, 64, 5000, false, MCOptions{10});
  EXPECT_LT(r.variance, 0.01);
  EXPECT_NEAR(r.predicted_variance, 64 * 0.5e-4 * (1 - 0.5e-4), 1e-12);
}

TEST(ConvEquiv, FourByFourReference) {
  Tensor<double> y({4, 4, 1});
  for (Index i = 0; i < 16; ++i) y[i] = static_cast<double>(i + 1);
  Tensor<double> w({2, 2, 1, 1}, {1, 2, 3, 4});
  const RowMatrix<double> product = unfold_patches(y, 2, 2, 2) * unfold_kernel(w);
  ASSERT_EQ(product.rows(), 4);
  ASSERT_EQ(product.cols(), 1);
  EXPECT_DOUBLE_EQ(product(0, 0), 44);
  EXPECT_DOUBLE_EQ(product(1, 0), 64);
  EXPECT_DOUBLE_EQ(product(2, 0), 124);
  EXPECT_DOUBLE_EQ(product(3, 0), 144);
  const ConvEquivReport r = conv_equiv(y, w, 2);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.max_deviation, 0.0);
}

TEST(ConvEquiv, PointwiseIdentityKernel) {
  std::mt19937_64 rng(1);
  const Tensor<double> y = testing_util::normal({3, 3, 4}, rng);
  Tensor<double> w({1, 1, 4, 4});
  for (Index c = 0; c < 4; ++c) w[c * 4 + c] = 1.0;
  const RowMatrix<double> product = unfold_patches(y, 1, 1, 1) * unfold_kernel(w);
  EXPECT_LT((product - Eigen::Map<const RowMatrix<double>>(y.data(), 9, 4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ConvEquiv, RandomStridedCases) {
  std::mt19937_64 rng(2);
  for (const Index p : {1, 2, 4}) {
    const Tensor<double> y = testing_util::normal({8, 8, 3}, rng);
    const Tensor<double> w = testing_util::normal({p, p, 5, 3}, rng);
    const ConvEquivReport r = conv_equiv(y, w, p);
    EXPECT_TRUE(r.pass) << p;
    EXPECT_LE(r.max_deviation, 1e-12);
  }
}

TEST(ConvEquiv, RegistryCasesEndWithReference) {
  const std::vector<ConvCase> cases = registry_conv_cases();
  ASSERT_FALSE(cases.empty());
  const ConvCase& last = cases.back();
  EXPECT_EQ(last.height, 4);
  EXPECT_EQ(last.kernel, 2);
  EXPECT_EQ(last.stride, 2);
  for (const ConvCase& c : cases) {
    EXPECT_EQ(c.kernel, c.stride) << c.name;
    EXPECT_EQ(c.height % c.stride, 0) << c.name;
  }
}

TEST(Gradcheck, SingleLinearLayer) {
  std::mt19937_64 rng(3);
  Parameter<double> w("w", testing_util::normal({4, 6}, rng));
  Parameter<double> b("b", testing_util::normal({4}, rng));
  const Tensor<double> x = testing_util::normal({5, 6}, rng);
  const Tensor<double> probe = testing_util::normal({5, 4}, rng);
  GradcheckOptions opts;
  opts.coords = 28;
  const GradcheckReport r =
      gradcheck("linear", {&w, &b}, [&] { return weighted_sum(linear(Var<double>(x), w.var(), b.var()), probe); },
                opts);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.entries.size(), 28u);
  // A linear loss has exact central differences up to rounding.
  EXPECT_LE(r.max_rel_error, 1e-7);
}

TEST(Gradcheck, NanoBlockSmallSample) {
  GradcheckOptions opts;
  opts.coords = 12;
  const GradcheckReport r = gradcheck_nano_block(opts);
  EXPECT_EQ(r.entries.size(), 12u);
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

TEST(Suite, UnknownSuiteIsAConfigError) {
  EXPECT_THROW(run_suite("nonsense", SuiteOptions{}), ConfigError);
}

TEST(Suite, Theorem1SingleCaseIsDeterministic) {
  SuiteOptions opts;
  opts.samples = 3000;
  opts.f_x = 0.5;
  opts.m = 100;
  const SuiteResult a = run_suite("theorem1", opts);
  const SuiteResult b = run_suite("theorem1", opts);
  EXPECT_EQ(a.checks, 2);
  EXPECT_EQ(a.jsonl, b.jsonl);
}
