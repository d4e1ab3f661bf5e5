// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/audit.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace resformer {

double estimate_energy(double sops_g) {
  if (!(sops_g >= 0.0)) throw ContractViolation("estimate_energy: SOP count must be non-negative");
  return sops_g * kPicojoulesPerSop;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::mac: return "mac";
    case LayerKind::synapse: return "synapse";
    case LayerKind::dst: return "dst";
    case LayerKind::dst_t: return "dst_t";
    case LayerKind::neuron: return "neuron";
  }
  return "unknown";
}

bool AuditRecord::spike_driven() const {
  return std::all_of(checks.begin(), checks.end(), [](const SpikeDrivenCheck& c) { return c.pass; });
}

double scaled_deviation(double event, double dense) {
  const double diff = std::abs(event - dense);
  const double magnitude = std::max(std::abs(event), std::abs(dense));
  return magnitude > 1.0 ? diff / magnitude : diff;
}

namespace {

// Number of output positions along one axis that read input position `i`.
std::vector<double> axis_fanout(Index extent, Index kernel, Index stride, Index padding) {
  const Index out = conv_output_extent(extent, kernel, stride, padding);
  std::vector<double> counts(static_cast<std::size_t>(extent), 0.0);
  for (Index o = 0; o < out; ++o) {
    for (Index k = 0; k < kernel; ++k) {
      const Index i = o * stride - padding + k;
      if (i >= 0 && i < extent) counts[static_cast<std::size_t>(i)] += 1.0;
    }
  }
  return counts;
}

void require_conv_shapes(const Shape& input, const Shape& kernel) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError("synapse audit expects [B,C,H,W] input and [O,I,h,w] kernel");
  }
}

}  // namespace

template <typename Scalar>
double synapse_sops(const Tensor<Scalar>& spikes, const Shape& kernel_shape, const Conv2dGeometry& geometry) {
  require_conv_shapes(spikes.shape(), kernel_shape);
  const Index n = spikes.dim(0), c = spikes.dim(1), h = spikes.dim(2), w = spikes.dim(3);
  const std::vector<double> fy = axis_fanout(h, kernel_shape[2], geometry.stride, geometry.padding);
  const std::vector<double> fx = axis_fanout(w, kernel_shape[3], geometry.stride, geometry.padding);
  const double group_out = static_cast<double>(kernel_shape[0] / geometry.groups);
  double total = 0.0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* s = spikes.data() + plane * h * w;
    for (Index y = 0; y < h; ++y) {
      double row = 0.0;
      for (Index x = 0; x < w; ++x) {
        if (s[y * w + x] != Scalar(0)) row += fx[static_cast<std::size_t>(x)];
      }
      total += row * fy[static_cast<std::size_t>(y)];
    }
  }
  return total * group_out;
}

template <typename Scalar>
SpikeDrivenCheck verify_synapse(const SynapseRecord<Scalar>& record) {
  const Tensor<Scalar>& in = record.input;
  const Tensor<Scalar>& k = record.kernel;
  require_conv_shapes(in.shape(), k.shape());
  if (!record.spike_input || !is_binary(in)) {
    throw UnsupportedLayer(record.layer + ": input is not a spike tensor, cannot be evaluated event-driven");
  }
  const Conv2dGeometry& g = record.geometry;
  const Index n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const Index out_c = k.dim(0), gi = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const Index go = out_c / g.groups;
  const Index oh = conv_output_extent(h, kh, g.stride, g.padding);
  const Index ow = conv_output_extent(w, kw, g.stride, g.padding);
  if (record.output.shape() != Shape{n, out_c, oh, ow}) {
    throw DimensionError(record.layer + ": recorded output " + to_string(record.output.shape()) +
                         " does not match the convolution geometry");
  }

  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(record.output.size());
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index group = ch / gi, ci = ch % gi;
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          if (in[((b * c + ch) * h + y) * w + x] == Scalar(0)) continue;
          for (Index ky = 0; ky < kh; ++ky) {
            const Index ny = y + g.padding - ky;
            if (ny < 0 || ny % g.stride != 0 || ny / g.stride >= oh) continue;
            for (Index kx = 0; kx < kw; ++kx) {
              const Index nx = x + g.padding - kx;
              if (nx < 0 || nx % g.stride != 0 || nx / g.stride >= ow) continue;
              const Index oy = ny / g.stride, ox = nx / g.stride;
              for (Index o = group * go; o < (group + 1) * go; ++o) {
                acc[((b * out_c + o) * oh + oy) * ow + ox] += double(k[((o * gi + ci) * kh + ky) * kw + kx]);
              }
            }
          }
        }
      }
    }
  }
  SpikeDrivenCheck check{record.layer, LayerKind::synapse};
  for (Index i = 0; i < acc.size(); ++i) {
    check.max_deviation = std::max(check.max_deviation, scaled_deviation(acc[i], double(record.output[i])));
  }
  check.checked = acc.size();
  check.pass = check.max_deviation <= kSpikeDrivenTolerance;
  return check;
}

template <typename Scalar>
SpikeDrivenCheck verify_dual_spike(const DualSpikeRecord<Scalar>& record) {
  const auto& gate = record.gate;
  const auto& patches = record.patches;
  const auto& weight = record.weight;
  const bool transposed = record.form == DualSpikeForm::dst_t;
  const Index tokens = patches.rows(), width = weight.cols();
  if (patches.cols() != weight.rows() || record.bias.size() != width) {
    throw DimensionError(record.layer + ": patch, weight and bias shapes disagree");
  }
  if (gate.cols() != (transposed ? width : tokens)) {
    throw DimensionError(record.layer + ": gate does not match the transform");
  }
  const auto binary = [](const RowMatrix<Scalar>& m) {
    return ((m.array() == Scalar(0)) || (m.array() == Scalar(1))).all();
  };
  if (!binary(gate) || !binary(patches)) {
    throw UnsupportedLayer(record.layer + ": dual-spike operands are not binary");
  }

  // Spiking positions within every patch token.
  std::vector<std::vector<Index>> active(static_cast<std::size_t>(tokens));
  for (Index j = 0; j < tokens; ++j) {
    for (Index k = 0; k < patches.cols(); ++k) {
      if (patches(j, k) != Scalar(0)) active[static_cast<std::size_t>(j)].push_back(k);
    }
  }
  const Eigen::MatrixXd w = weight.template cast<double>();
  const Eigen::VectorXd bias = record.bias.template cast<double>();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(gate.rows(), transposed ? tokens : width);
  for (Index i = 0; i < gate.rows(); ++i) {
    for (Index a = 0; a < gate.cols(); ++a) {
      if (gate(i, a) == Scalar(0)) continue;
      if (transposed) {
        // Gate spike (i, channel a) meets every spike of every patch token.
        for (Index j = 0; j < tokens; ++j) {
          for (Index k : active[static_cast<std::size_t>(j)]) acc(i, j) += w(k, a);
          acc(i, j) += bias[a];
        }
      } else {
        // Gate spike (i, token a) meets the spikes of patch token a.
        for (Index k : active[static_cast<std::size_t>(a)]) acc.row(i) += w.row(k);
        acc.row(i) += bias.transpose();
      }
    }
  }
  SpikeDrivenCheck check{record.layer, transposed ? LayerKind::dst_t : LayerKind::dst};
  if (acc.rows() != record.current.rows() || acc.cols() != record.current.cols()) {
    throw DimensionError(record.layer + ": recorded current has the wrong shape");
  }
  for (Index i = 0; i < acc.rows(); ++i) {
    for (Index j = 0; j < acc.cols(); ++j) {
      check.max_deviation = std::max(check.max_deviation, scaled_deviation(acc(i, j), double(record.current(i, j))));
    }
  }
  check.checked = acc.size();
  check.pass = check.max_deviation <= kSpikeDrivenTolerance;
  check.bias_flagged = (bias.array() != 0.0).any();
  return check;
}

template <typename Scalar>
void AuditObserver<Scalar>::on_synapse(const SynapseRecord<Scalar>& record) {
  LayerAudit& entry = layers_[record.layer];
  entry.layer = record.layer;
  if (!record.spike_input) {
    entry.kind = LayerKind::mac;
    entry.macs += static_cast<double>(record.output.size()) *
                  static_cast<double>(record.kernel.dim(1) * record.kernel.dim(2) * record.kernel.dim(3));
    return;
  }
  entry.kind = LayerKind::synapse;
  entry.spikes += static_cast<double>((record.input.array() != Scalar(0)).count());
  entry.elements += static_cast<double>(record.input.size());
  entry.sops += synapse_sops(record.input, record.kernel.shape(), record.geometry);
  if (verify_) merge_check(verify_synapse(record));
}

template <typename Scalar>
void AuditObserver<Scalar>::on_dual_spike_counts(const std::string& layer, const DualSpikeCounts& counts) {
  LayerAudit& entry = layers_[layer];
  entry.layer = layer;
  entry.kind = counts.form == DualSpikeForm::dst_t ? LayerKind::dst_t : LayerKind::dst;
  entry.spikes += static_cast<double>(counts.gate_spikes);
  entry.elements += static_cast<double>(counts.gate_elements);
  entry.sops += static_cast<double>(counts.fanout);
  entry.coincidences += counts.coincidences;
}

template <typename Scalar>
void AuditObserver<Scalar>::on_dual_spike(const DualSpikeRecord<Scalar>& record) {
  merge_check(verify_dual_spike(record));
}

template <typename Scalar>
void AuditObserver<Scalar>::on_neuron(const std::string& layer, const Tensor<Scalar>& spikes) {
  LayerAudit& entry = layers_[layer];
  entry.layer = layer;
  entry.kind = LayerKind::neuron;
  entry.spikes += static_cast<double>((spikes.array() != Scalar(0)).count());
  entry.elements += static_cast<double>(spikes.size());
}

template <typename Scalar>
void AuditObserver<Scalar>::merge_check(const SpikeDrivenCheck& check) {
  auto [it, inserted] = checks_.emplace(check.layer, check);
  if (inserted) return;
  SpikeDrivenCheck& c = it->second;
  c.max_deviation = std::max(c.max_deviation, check.max_deviation);
  c.checked += check.checked;
  c.pass = c.pass && check.pass;
  c.bias_flagged = c.bias_flagged || check.bias_flagged;
}

template <typename Scalar>
AuditRecord AuditObserver<Scalar>::finish(Index images, Index time_steps) const {
  if (images <= 0) throw ContractViolation("audit: image count must be positive");
  AuditRecord rec;
  rec.images = images;
  rec.time_steps = time_steps;
  const double per = 1.0 / static_cast<double>(images);
  for (const auto& [name, layer] : layers_) {
    LayerAudit l = layer;
    l.spikes *= per;
    l.elements *= per;
    l.sops *= per;
    l.macs *= per;
    l.coincidences *= per;
    rec.total_sops += l.sops;
    rec.stem_macs += l.macs;
    rec.coincidences += l.coincidences;
    rec.layers.push_back(std::move(l));
  }
  for (const auto& [name, check] : checks_) rec.checks.push_back(check);
  return rec;
}

template <typename Scalar>
AuditRecord count_sops(Model<Scalar>& model, const Tensor<Scalar>& images, bool verify) {
  NoGradGuard no_grad;
  AuditObserver<Scalar> observer(verify);
  RunContext<Scalar> ctx = model.context(false);
  ctx.observer = &observer;
  model.forward(images, ctx);
  return observer.finish(images.dim(0), ctx.time_steps);
}

void merge_audit(AuditRecord& total, const AuditRecord& part) {
  if (total.images == 0) {
    total = part;
    return;
  }
  const double a = static_cast<double>(total.images), b = static_cast<double>(part.images);
  const auto mix = [a, b](double x, double y) { return (x * a + y * b) / (a + b); };
  std::map<std::string, LayerAudit> merged;
  for (const LayerAudit& l : total.layers) merged[l.layer] = l;
  for (const LayerAudit& l : part.layers) {
    auto it = merged.find(l.layer);
    if (it == merged.end()) {
      LayerAudit scaled = l;
      scaled.spikes = mix(0, l.spikes);
      scaled.elements = mix(0, l.elements);
      scaled.sops = mix(0, l.sops);
      scaled.macs = mix(0, l.macs);
      scaled.coincidences = mix(0, l.coincidences);
      merged.emplace(l.layer, scaled);
      continue;
    }
    LayerAudit& m = it->second;
    m.spikes = mix(m.spikes, l.spikes);
    m.elements = mix(m.elements, l.elements);
    m.sops = mix(m.sops, l.sops);
    m.macs = mix(m.macs, l.macs);
    m.coincidences = mix(m.coincidences, l.coincidences);
  }
  total.total_sops = mix(total.total_sops, part.total_sops);
  total.stem_macs = mix(total.stem_macs, part.stem_macs);
  total.coincidences = mix(total.coincidences, part.coincidences);
  total.layers.clear();
  for (auto& [name, l] : merged) total.layers.push_back(l);
  std::map<std::string, SpikeDrivenCheck> checks;
  for (const SpikeDrivenCheck& c : total.checks) checks[c.layer] = c;
  for (const SpikeDrivenCheck& c : part.checks) {
    auto [it, inserted] = checks.emplace(c.layer, c);
    if (inserted) continue;
    it->second.max_deviation = std::max(it->second.max_deviation, c.max_deviation);
    it->second.checked += c.checked;
    it->second.pass = it->second.pass && c.pass;
    it->second.bias_flagged = it->second.bias_flagged || c.bias_flagged;
  }
  total.checks.clear();
  for (auto& [name, c] : checks) total.checks.push_back(c);
  total.images += part.images;
}

std::string audit_jsonl(const AuditRecord& record) {
  using nlohmann::ordered_json;
  std::ostringstream out;
  for (const LayerAudit& l : record.layers) {
    ordered_json j;
    j["record"] = "layer";
    j["layer"] = l.layer;
    j["kind"] = to_string(l.kind);
    j["spikes"] = l.spikes;
    j["firing_rate"] = l.firing_rate();
    j["sops"] = l.sops;
    if (l.kind == LayerKind::mac) j["macs"] = l.macs;
    if (l.kind == LayerKind::dst || l.kind == LayerKind::dst_t) j["coincidences"] = l.coincidences;
    out << j.dump() << "\n";
  }
  for (const SpikeDrivenCheck& c : record.checks) {
    ordered_json j;
    j["record"] = "spike_driven";
    j["layer"] = c.layer;
    j["kind"] = to_string(c.kind);
    j["max_deviation"] = c.max_deviation;
    j["checked"] = c.checked;
    j["pass"] = c.pass;
    if (c.kind == LayerKind::dst || c.kind == LayerKind::dst_t) j["bias_flagged"] = c.bias_flagged;
    out << j.dump() << "\n";
  }
  ordered_json t;
  t["record"] = "totals";
  t["images"] = record.images;
  t["time_steps"] = record.time_steps;
  t["sops_per_image"] = record.total_sops;
  t["sops_g"] = record.sops_g();
  t["energy_mj"] = record.energy_mj();
  t["stem_macs_per_image"] = record.stem_macs;
  t["dual_spike_coincidences_per_image"] = record.coincidences;
  if (!record.checks.empty()) t["spike_driven"] = record.spike_driven();
  out << t.dump() << "\n";
  return out.str();
}

std::string audit_table(const AuditRecord& record) {
  std::ostringstream out;
  out << std::left << std::setw(34) << "layer" << std::setw(9) << "kind" << std::right << std::setw(10) << "rate"
      << std::setw(16) << "SOPs/image" << "\n";
  for (const LayerAudit& l : record.layers) {
    out << std::left << std::setw(34) << l.layer << std::setw(9) << to_string(l.kind) << std::right << std::fixed
        << std::setprecision(4) << std::setw(10) << l.firing_rate() << std::setprecision(0) << std::setw(16)
        << (l.kind == LayerKind::mac ? l.macs : l.sops) << "\n";
  }
  out << std::setprecision(6) << "total SOPs/image: " << record.sops_g() << " G, energy: " << record.energy_mj()
      << " mJ (stem MACs/image excluded: " << std::setprecision(0) << record.stem_macs << ")\n";
  if (!record.checks.empty()) {
    double worst = 0;
    bool bias = false;
    for (const SpikeDrivenCheck& c : record.checks) {
      worst = std::max(worst, c.max_deviation);
      bias = bias || c.bias_flagged;
    }
    out << std::scientific << std::setprecision(2) << "spike-driven: " << (record.spike_driven() ? "pass" : "FAIL")
        << " over " << record.checks.size() << " layers, max deviation " << worst << "\n";
    if (bias) out << "note: folded batch-norm bias in dual-spike layers is accumulated once per gate spike\n";
  }
  return out.str();
}

#define RESFORMER_INSTANTIATE_AUDIT(S)                                                         \
  template double synapse_sops(const Tensor<S>&, const Shape&, const Conv2dGeometry&);        \
  template SpikeDrivenCheck verify_synapse(const SynapseRecord<S>&);                          \
  template SpikeDrivenCheck verify_dual_spike(const DualSpikeRecord<S>&);                     \
  template class AuditObserver<S>;                                                             \
  template AuditRecord count_sops(Model<S>&, const Tensor<S>&, bool);

RESFORMER_INSTANTIATE_AUDIT(float)
RESFORMER_INSTANTIATE_AUDIT(double)

}  // namespace resformer
