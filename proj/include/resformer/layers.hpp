// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/autograd.hpp"
#include "resformer/neuron.hpp"
#include "resformer/ops.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace resformer {

struct FiringRateEMA;

enum class DualSpikeForm { dst, dst_t };

/// One weight-accumulating layer as seen by an observer. `output` is the
/// current the forward pass computed before any normalization.
template <typename Scalar>
struct SynapseRecord {
  const std::string& layer;
  bool spike_input;
  const Tensor<Scalar>& input;
  const Tensor<Scalar>& kernel;
  Conv2dGeometry geometry;
  const Tensor<Scalar>& output;
  Index time_steps;
};

/// Spike-pair gated transform for one (sample, head) in row-per-token layout.
///   dst_t: current = gate * (patches * weight + 1 bias^T)^T
///   dst:   current = gate * (patches * weight + 1 bias^T)
/// `weight`/`bias` are the eval-mode folded Conv_p + BN.
template <typename Scalar>
struct DualSpikeRecord {
  std::string layer;
  DualSpikeForm form;
  RowMatrix<Scalar> gate;
  RowMatrix<Scalar> patches;
  RowMatrix<Scalar> weight;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bias;
  RowMatrix<Scalar> current;
};

/// Spike-count summary of a dual-spike product across a whole batch.
struct DualSpikeCounts {
  DualSpikeForm form;
  Index gate_elements = 0;
  Index gate_spikes = 0;
  // Accumulations each gate spike triggers in the factored evaluation.
  Index fanout = 0;
  // Number of (gate spike, patch spike) coincidences, times output fan-out.
  double coincidences = 0;
  Index time_steps = 1;
};

template <typename Scalar>
class SynapseObserver {
 public:
  virtual ~SynapseObserver() = default;
  virtual void on_synapse(const SynapseRecord<Scalar>& record) = 0;
  virtual void on_dual_spike_counts(const std::string& layer, const DualSpikeCounts& counts) = 0;
  /// Detailed records are produced only when this returns true and batch
  /// norms are in eval mode.
  virtual bool wants_dual_spike_detail() const { return false; }
  virtual void on_dual_spike(const DualSpikeRecord<Scalar>& record) { (void)record; }
  virtual void on_neuron(const std::string& layer, const Tensor<Scalar>& spikes) {
    (void)layer;
    (void)spikes;
  }
};

/// Settings shared by every layer during one forward pass.
template <typename Scalar>
struct RunContext {
  Index time_steps = 4;
  LIFParams lif;
  SurrogateSpec surrogate;
  NeuronMode neuron_mode = NeuronMode::spiking;
  bool training = false;
  bool track_rates = true;
  SynapseObserver<Scalar>* observer = nullptr;
};

/// Non-owning references to everything a checkpoint or optimizer touches.
template <typename Scalar>
struct StateRefs {
  std::vector<Parameter<Scalar>*> parameters;
  std::vector<std::pair<std::string, BatchNormState<Scalar>*>> batchnorms;
  std::vector<std::pair<std::string, FiringRateEMA*>> rates;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, Index fan_in, std::mt19937_64& rng);

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, Index in_channels, Index out_channels, Index kernel, Conv2dGeometry geometry,
         std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx, bool spike_input = true) const;
  void collect(StateRefs<Scalar>& refs) { refs.parameters.push_back(&weight); }

  std::string name;
  Conv2dGeometry geometry;
  Parameter<Scalar> weight;
};

template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, Index channels);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx);
  void collect(StateRefs<Scalar>& refs);

  std::string name;
  Parameter<Scalar> gamma;
  Parameter<Scalar> beta;
  BatchNormState<Scalar> state;
};

template <typename Scalar>
class SpikingLayer {
 public:
  SpikingLayer() = default;
  explicit SpikingLayer(std::string name) : name(std::move(name)) {}

  Var<Scalar> forward(const Var<Scalar>& current, const RunContext<Scalar>& ctx) const;

  std::string name;
};

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, Index in_features, Index out_features, std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input) const;
  void collect(StateRefs<Scalar>& refs) {
    refs.parameters.push_back(&weight);
    refs.parameters.push_back(&bias);
  }

  std::string name;
  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

}  // namespace resformer
