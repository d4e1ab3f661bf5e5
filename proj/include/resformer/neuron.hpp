// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/autograd.hpp"
#include "resformer/tensor.hpp"

namespace resformer {

/// Leaky integrate-and-fire constants. `tau` is dimensionless (charging
/// factor 1/tau); thresholds are in potential units.
struct LIFParams {
  double tau = 2.0;
  double u_th = 1.0;
  double u_rest = 0.0;

  void validate() const;
};

enum class SurrogateKind { triangular, sigmoid_derivative };

/// Pseudo-derivative used in place of the Heaviside derivative. Both kinds
/// peak at 1 / width and integrate to 1.
struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::triangular;
  double width = 1.0;

  void validate() const;
};

/// `smoothed` replaces the Heaviside with the surrogate's primitive in the
/// forward pass so the backward pass is the exact derivative (gradient checks).
enum class NeuronMode { spiking, smoothed };

template <typename Scalar>
struct NeuronState {
  Tensor<Scalar> u;
};

template <typename Scalar>
NeuronState<Scalar> resting_state(const Shape& shape, const LIFParams& params);

template <typename Scalar>
struct LifStep {
  Tensor<Scalar> v;
  SpikeTensor<Scalar> s;
  NeuronState<Scalar> next;
};

/// One charge / fire / reset step. Fires when v >= u_th.
template <typename Scalar>
LifStep<Scalar> lif_step(const NeuronState<Scalar>& state, const Tensor<Scalar>& current, const LIFParams& params);

/// Runs `lif_step` over the leading time axis from a resting state.
template <typename Scalar>
SpikeTensor<Scalar> sn_forward(const Tensor<Scalar>& current, const LIFParams& params);

/// Elementwise surrogate derivative of H(v - u_th).
template <typename Scalar>
Tensor<Scalar> surrogate_grad(const Tensor<Scalar>& v, const LIFParams& params, const SurrogateSpec& spec);

/// phi(x): surrogate density at x = v - u_th.
double surrogate_density(double x, const SurrogateSpec& spec);
/// Phi(x): primitive of phi, a smooth step from 0 to 1.
double surrogate_step(double x, const SurrogateSpec& spec);

/// Differentiable spiking layer over currents laid out [T * B, ...] time-major.
/// Reset is detached in spiking mode.
template <typename Scalar>
Var<Scalar> spiking_neuron(const Var<Scalar>& current, Index time_steps, const LIFParams& params,
                           const SurrogateSpec& spec, NeuronMode mode = NeuronMode::spiking);

}  // namespace resformer
