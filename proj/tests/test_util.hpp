// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/tensor.hpp"

#include <limits>
#include <random>

namespace testing_util {

using resformer::Index;
using resformer::Shape;
using resformer::Tensor;

template <typename Scalar = double>
Tensor<Scalar> normal(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd;
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(scale * nd(rng));
  return t;
}

template <typename Scalar = double>
Tensor<Scalar> bernoulli(Shape shape, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bd(p);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = bd(rng) ? Scalar(1) : Scalar(0);
  return t;
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a.array() - b.array()).abs().maxCoeff());
}

}  // namespace testing_util
