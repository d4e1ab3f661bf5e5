// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/layers.hpp"

#include <cmath>

namespace resformer {

template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, Index fan_in, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(dist(rng));
  return t;
}

template <typename Scalar>
Conv2d<Scalar>::Conv2d(std::string name_, Index in_channels, Index out_channels, Index kernel,
                       Conv2dGeometry geometry_, std::mt19937_64& rng)
    : name(std::move(name_)), geometry(geometry_) {
  if (geometry.groups < 1 || in_channels % geometry.groups != 0 || out_channels % geometry.groups != 0) {
    throw ConfigError(name + ": channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                      " not divisible by groups " + std::to_string(geometry.groups));
  }
  const Index group_in = in_channels / geometry.groups;
  weight = Parameter<Scalar>(name + ".weight",
                             uniform_init<Scalar>({out_channels, group_in, kernel, kernel},
                                                  group_in * kernel * kernel, rng));
}

template <typename Scalar>
Var<Scalar> Conv2d<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx, bool spike_input) const {
  Var<Scalar> out = conv2d(input, weight.var(), geometry);
  if (ctx.observer) {
    ctx.observer->on_synapse(
        {name, spike_input, input.value(), weight.value(), geometry, out.value(), ctx.time_steps});
  }
  return out;
}

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(std::string name_, Index channels)
    : name(std::move(name_)),
      gamma(name + ".gamma", Tensor<Scalar>({channels}, Scalar(1)), false),
      beta(name + ".beta", Tensor<Scalar>({channels}, Scalar(0)), false),
      state(channels) {}

template <typename Scalar>
Var<Scalar> BatchNorm2d<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx) {
  state.mode = ctx.training ? BatchNormMode::train : BatchNormMode::eval;
  return batchnorm(input, gamma.var(), beta.var(), state);
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect(StateRefs<Scalar>& refs) {
  refs.parameters.push_back(&gamma);
  refs.parameters.push_back(&beta);
  refs.batchnorms.emplace_back(name, &state);
}

template <typename Scalar>
Var<Scalar> SpikingLayer<Scalar>::forward(const Var<Scalar>& current, const RunContext<Scalar>& ctx) const {
  Var<Scalar> spikes = spiking_neuron(current, ctx.time_steps, ctx.lif, ctx.surrogate, ctx.neuron_mode);
  if (ctx.observer) ctx.observer->on_neuron(name, spikes.value());
  return spikes;
}

template <typename Scalar>
Linear<Scalar>::Linear(std::string name_, Index in_features, Index out_features, std::mt19937_64& rng)
    : name(std::move(name_)) {
  weight = Parameter<Scalar>(name + ".weight", uniform_init<Scalar>({out_features, in_features}, in_features, rng));
  bias = Parameter<Scalar>(name + ".bias", uniform_init<Scalar>({out_features}, in_features, rng), false);
}

template <typename Scalar>
Var<Scalar> Linear<Scalar>::forward(const Var<Scalar>& input) const {
  return linear(input, weight.var(), bias.var());
}

template Tensor<float> uniform_init(Shape, Index, std::mt19937_64&);
template Tensor<double> uniform_init(Shape, Index, std::mt19937_64&);
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class SpikingLayer<float>;
template class SpikingLayer<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace resformer
