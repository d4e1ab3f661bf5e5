// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/layers.hpp"
#include "resformer/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace resformer {

/// Energy per synaptic operation, in picojoules.
inline constexpr double kPicojoulesPerSop = 0.9;

/// SOPs in units of 1e9 -> energy in millijoules.
double estimate_energy(double sops_g);

/// Thrown when a layer cannot be evaluated event-driven (non-binary input).
class UnsupportedLayer : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind { mac, synapse, dst, dst_t, neuron };
std::string to_string(LayerKind kind);

/// Per-layer totals, normalized per image.
struct LayerAudit {
  std::string layer;
  LayerKind kind = LayerKind::synapse;
  // Spikes driving the layer (synapse / dual-spike) or emitted (neuron).
  double spikes = 0;
  double elements = 0;
  double sops = 0;
  double macs = 0;
  double coincidences = 0;

  double firing_rate() const { return elements > 0 ? spikes / elements : 0.0; }
};

struct SpikeDrivenCheck {
  std::string layer;
  LayerKind kind = LayerKind::synapse;
  double max_deviation = 0;
  Index checked = 0;
  bool pass = true;
  // Set for dual-spike layers whose folded transform carries a bias, which the
  // event path adds once per gate spike.
  bool bias_flagged = false;
};

struct AuditRecord {
  Index images = 0;
  Index time_steps = 0;
  std::vector<LayerAudit> layers;  // sorted by layer name
  double total_sops = 0;           // per image, excludes the real-valued stem
  double stem_macs = 0;            // per image
  double coincidences = 0;         // per image, dual-spike pairs (informative)
  std::vector<SpikeDrivenCheck> checks;

  double sops_g() const { return total_sops / 1e9; }
  double energy_mj() const { return estimate_energy(sops_g()); }
  bool spike_driven() const;
};

/// Tolerance for event vs. dense agreement, relative once |value| > 1.
inline constexpr double kSpikeDrivenTolerance = 1e-6;

/// Relative-for-large deviation used by every spike-driven check.
double scaled_deviation(double event, double dense);

/// Synaptic-operation count for one spike-input convolution: every input
/// spike costs one accumulation per output it reaches.
template <typename Scalar>
double synapse_sops(const Tensor<Scalar>& spikes, const Shape& kernel_shape, const Conv2dGeometry& geometry);

/// Re-evaluates a convolution by scattering kernel taps for every input spike
/// and compares with the recorded output.
template <typename Scalar>
SpikeDrivenCheck verify_synapse(const SynapseRecord<Scalar>& record);

/// Re-evaluates a dual-spike product by accumulating weights only over
/// (gate spike, patch spike) pairs and compares with the recorded current.
template <typename Scalar>
SpikeDrivenCheck verify_dual_spike(const DualSpikeRecord<Scalar>& record);

/// Observer that accumulates SOPs per layer and, optionally, runs the
/// spike-driven checks as the forward pass proceeds.
template <typename Scalar>
class AuditObserver : public SynapseObserver<Scalar> {
 public:
  explicit AuditObserver(bool verify) : verify_(verify) {}

  void on_synapse(const SynapseRecord<Scalar>& record) override;
  void on_dual_spike_counts(const std::string& layer, const DualSpikeCounts& counts) override;
  bool wants_dual_spike_detail() const override { return verify_; }
  void on_dual_spike(const DualSpikeRecord<Scalar>& record) override;
  void on_neuron(const std::string& layer, const Tensor<Scalar>& spikes) override;

  /// Normalizes the accumulated totals by `images`.
  AuditRecord finish(Index images, Index time_steps) const;

 private:
  void merge_check(const SpikeDrivenCheck& check);

  bool verify_;
  std::map<std::string, LayerAudit> layers_;
  std::map<std::string, SpikeDrivenCheck> checks_;
};

/// One eval-mode forward pass over `images` with SOP accounting.
template <typename Scalar>
AuditRecord count_sops(Model<Scalar>& model, const Tensor<Scalar>& images, bool verify = false);

/// Adds the per-layer sums of `part` into `total` (both per image).
void merge_audit(AuditRecord& total, const AuditRecord& part);

/// One JSON object per layer (sorted), then per check, then a totals record.
std::string audit_jsonl(const AuditRecord& record);
std::string audit_table(const AuditRecord& record);

}  // namespace resformer
