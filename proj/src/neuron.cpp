// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/neuron.hpp"

#include <cmath>
#include <memory>

namespace resformer {

void LIFParams::validate() const {
  if (!(tau >= 1.0)) throw ConfigError("LIF tau must be >= 1");
  if (!(u_th > u_rest)) throw ConfigError("LIF threshold must exceed the resting potential");
}

void SurrogateSpec::validate() const {
  if (!(width > 0.0)) throw ConfigError("surrogate width must be positive");
}

double surrogate_density(double x, const SurrogateSpec& spec) {
  const double w = spec.width;
  if (spec.kind == SurrogateKind::triangular) return std::max(0.0, 1.0 - std::abs(x) / w) / w;
  const double k = 4.0 / w;
  const double s = 1.0 / (1.0 + std::exp(-k * x));
  return k * s * (1.0 - s);
}

double surrogate_step(double x, const SurrogateSpec& spec) {
  const double w = spec.width;
  if (spec.kind == SurrogateKind::triangular) {
    if (x <= -w) return 0.0;
    if (x >= w) return 1.0;
    if (x <= 0.0) return (x + w) * (x + w) / (2.0 * w * w);
    return 1.0 - (w - x) * (w - x) / (2.0 * w * w);
  }
  return 1.0 / (1.0 + std::exp(-4.0 / w * x));
}

template <typename Scalar>
NeuronState<Scalar> resting_state(const Shape& shape, const LIFParams& params) {
  return {Tensor<Scalar>(shape, Scalar(params.u_rest))};
}

template <typename Scalar>
LifStep<Scalar> lif_step(const NeuronState<Scalar>& state, const Tensor<Scalar>& current, const LIFParams& params) {
  params.validate();
  if (state.u.shape() != current.shape()) {
    throw DimensionError("lif_step: current " + to_string(current.shape()) + " does not match state " +
                         to_string(state.u.shape()));
  }
  const Scalar inv_tau = Scalar(1.0 / params.tau);
  const Scalar u_rest = Scalar(params.u_rest), u_th = Scalar(params.u_th);
  Tensor<Scalar> v(current.shape());
  v.array() = state.u.array() + inv_tau * (current.array() - (state.u.array() - u_rest));
  Tensor<Scalar> s(current.shape());
  s.array() = (v.array() >= u_th).template cast<Scalar>();
  NeuronState<Scalar> next{Tensor<Scalar>(current.shape())};
  next.u.array() = (s.array() > Scalar(0)).select(u_rest, v.array());
  return {std::move(v), detail::SpikeAccess::wrap(std::move(s)), std::move(next)};
}

template <typename Scalar>
SpikeTensor<Scalar> sn_forward(const Tensor<Scalar>& current, const LIFParams& params) {
  if (current.rank() < 1 || current.dim(0) == 0) throw DimensionError("sn_forward: input has no time steps");
  const Index steps = current.dim(0);
  const Index chunk = current.size() / steps;
  Tensor<Scalar> spikes(current.shape());
  NeuronState<Scalar> state = resting_state<Scalar>({chunk}, params);
  for (Index t = 0; t < steps; ++t) {
    Tensor<Scalar> step_current({chunk}, typename Tensor<Scalar>::Array(current.array().segment(t * chunk, chunk)));
    LifStep<Scalar> step = lif_step(state, step_current, params);
    spikes.array().segment(t * chunk, chunk) = step.s.values().array();
    state = std::move(step.next);
  }
  return detail::SpikeAccess::wrap(std::move(spikes));
}

template <typename Scalar>
Tensor<Scalar> surrogate_grad(const Tensor<Scalar>& v, const LIFParams& params, const SurrogateSpec& spec) {
  spec.validate();
  Tensor<Scalar> out(v.shape());
  for (Index i = 0; i < v.size(); ++i) out[i] = Scalar(surrogate_density(double(v[i]) - params.u_th, spec));
  return out;
}

template <typename Scalar>
Var<Scalar> spiking_neuron(const Var<Scalar>& current, Index time_steps, const LIFParams& params,
                           const SurrogateSpec& spec, NeuronMode mode) {
  params.validate();
  spec.validate();
  const Tensor<Scalar>& input = current.value();
  if (time_steps < 1 || input.rank() < 1 || input.dim(0) % time_steps != 0) {
    throw DimensionError("spiking_neuron: leading axis of " + to_string(input.shape()) +
                         " is not a multiple of T=" + std::to_string(time_steps));
  }
  const Index chunk = input.size() / time_steps;
  const Scalar inv_tau = Scalar(1.0 / params.tau);
  const Scalar u_rest = Scalar(params.u_rest), u_th = Scalar(params.u_th);
  const bool record = grad_enabled() && current.requires_grad();

  Tensor<Scalar> out(input.shape());
  // Per element: d s / d v and d u[t+1] / d v[t].
  auto density = std::make_shared<Tensor<Scalar>>();
  auto carry = std::make_shared<Tensor<Scalar>>();
  if (record) {
    *density = Tensor<Scalar>(input.shape());
    *carry = Tensor<Scalar>(input.shape());
  }
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Array u = Array::Constant(chunk, u_rest);
  const bool triangular = spec.kind == SurrogateKind::triangular;
  for (Index t = 0; t < time_steps; ++t) {
    const Index off = t * chunk;
    if (mode == NeuronMode::spiking && (triangular || !record)) {
      const Array v = u + inv_tau * (input.array().segment(off, chunk) - (u - u_rest));
      const Array s = (v >= u_th).template cast<Scalar>();
      u = (s > Scalar(0)).select(u_rest, v);
      out.array().segment(off, chunk) = s;
      if (record) {
        const Scalar inv_w = Scalar(1.0 / spec.width);
        density->array().segment(off, chunk) = (Scalar(1) - (v - u_th).abs() * inv_w).max(Scalar(0)) * inv_w;
        carry->array().segment(off, chunk) = Scalar(1) - s;
      }
      continue;
    }
    for (Index i = 0; i < chunk; ++i) {
      const Scalar v = u[i] + inv_tau * (input[off + i] - (u[i] - u_rest));
      const double x = double(v - u_th);
      Scalar s;
      if (mode == NeuronMode::spiking) {
        s = v >= u_th ? Scalar(1) : Scalar(0);
        u[i] = s > Scalar(0) ? u_rest : v;
      } else {
        s = Scalar(surrogate_step(x, spec));
        u[i] = s * u_rest + (Scalar(1) - s) * v;
      }
      out[off + i] = s;
      if (record) {
        const Scalar phi = Scalar(surrogate_density(x, spec));
        (*density)[off + i] = phi;
        (*carry)[off + i] =
            mode == NeuronMode::spiking ? Scalar(1) - s : (Scalar(1) - s) + (u_rest - v) * phi;
      }
    }
  }

  const Scalar leak = Scalar(1) - inv_tau;
  return Var<Scalar>::record(std::move(out), {current}, [=](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor<Scalar>& grad_in = in.grad_buffer();
    Eigen::Array<Scalar, Eigen::Dynamic, 1> grad_u = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(chunk);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> grad_v(chunk);
    for (Index t = time_steps - 1; t >= 0; --t) {
      const Index off = t * chunk;
      grad_v = n.grad.array().segment(off, chunk) * density->array().segment(off, chunk) +
               grad_u * carry->array().segment(off, chunk);
      grad_in.array().segment(off, chunk) += grad_v * inv_tau;
      grad_u = grad_v * leak;
    }
  });
}

#define RESFORMER_INSTANTIATE_NEURON(S)                                                                   \
  template NeuronState<S> resting_state(const Shape&, const LIFParams&);                                  \
  template LifStep<S> lif_step(const NeuronState<S>&, const Tensor<S>&, const LIFParams&);                \
  template SpikeTensor<S> sn_forward(const Tensor<S>&, const LIFParams&);                                 \
  template Tensor<S> surrogate_grad(const Tensor<S>&, const LIFParams&, const SurrogateSpec&);            \
  template Var<S> spiking_neuron(const Var<S>&, Index, const LIFParams&, const SurrogateSpec&, NeuronMode);

RESFORMER_INSTANTIATE_NEURON(float)
RESFORMER_INSTANTIATE_NEURON(double)

}  // namespace resformer
