// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/attention.hpp"
#include "resformer/ffn.hpp"
#include "resformer/layers.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace resformer {

struct StemSpec {
  Index kernel = 7;
  Index stride = 2;
  Index padding = 3;
  bool pool = true;
  Index pool_window = 3;
  Index pool_stride = 2;
  Index pool_padding = 1;
};

struct StageSpec {
  Index dim = 0;
  Index heads = 1;
  Index patch = 1;
  Index ratio = 4;
  Index group_width = 64;
  Index blocks = 1;
};

struct ModelConfig {
  std::string name;
  Index input_height = 224;
  Index input_width = 224;
  Index in_channels = 3;
  Index time_steps = 4;
  StemSpec stem;
  std::vector<StageSpec> stages;
  Index num_classes = 1000;

  /// Feature-map extent (height, width) inside every stage.
  std::vector<std::pair<Index, Index>> stage_extents() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Canonical key/value text accepted by `parse_config`.
  std::string echo() const;
  /// FNV-1a over `echo()`.
  std::uint64_t digest() const;
};

/// Registered architectures: Ti, S, M, L and the desk-scale Nano.
ModelConfig registry_config(const std::string& arch);
std::vector<std::string> registry_names();

/// Published parameter count in millions, when the architecture has one.
std::optional<double> published_param_millions(const std::string& arch);

/// Parses `key = value` lines; `#` starts a comment. An `arch` key seeds the
/// config from the registry and must come first. Unknown keys are errors.
ModelConfig parse_config(std::istream& in, const std::string& source = "<config>");
ModelConfig load_config_file(const std::string& path);

/// Y = MHDSSA(X) + X; X' = GWSFFN(Y) + Y
template <typename Scalar>
class ResformerBlock {
 public:
  ResformerBlock() = default;
  ResformerBlock(const std::string& name, const StageSpec& spec, std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx);
  void collect(StateRefs<Scalar>& refs);

  MultiHeadDSSA<Scalar> attention;
  GWSFFN<Scalar> ffn;
};

/// SN -> Conv 3x3 stride 2 -> BN
template <typename Scalar>
class Downsample {
 public:
  Downsample() = default;
  Downsample(const std::string& name, Index in_channels, Index out_channels, std::mt19937_64& rng);

  Var<Scalar> forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx);
  void collect(StateRefs<Scalar>& refs);

  SpikingLayer<Scalar> sn;
  Conv2d<Scalar> conv;
  BatchNorm2d<Scalar> bn;
};

struct ParamGroup {
  std::string name;
  Index count = 0;
};

template <typename Scalar>
class Model {
 public:
  explicit Model(ModelConfig config, std::uint64_t seed = 0);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Context preset for this model's time steps.
  RunContext<Scalar> context(bool training) const;

  /// images [B, C, H, W] -> time-averaged logits [B, num_classes].
  Var<Scalar> forward(const Tensor<Scalar>& images, const RunContext<Scalar>& ctx);

  /// Every parameter, batch-norm state and firing-rate EMA, in a fixed order.
  StateRefs<Scalar> state();
  Index param_count();
  /// Parameter totals per top-level layer, in forward order.
  std::vector<ParamGroup> param_breakdown();

  /// EMA of the DSSA input firing rate, averaged over each stage's blocks.
  std::vector<double> stage_input_rates() const;

  /// Copies every parameter, batch-norm statistic and EMA from a model built
  /// with the same config (possibly a different scalar type).
  template <typename Other>
  void load_state_from(Model<Other>& other);

  Conv2d<Scalar> stem_conv;
  BatchNorm2d<Scalar> stem_bn;
  std::vector<std::vector<ResformerBlock<Scalar>>> stages;
  std::vector<Downsample<Scalar>> downsamples;
  SpikingLayer<Scalar> head_sn;
  Linear<Scalar> classifier;

 private:
  Var<Scalar> head(const Var<Scalar>& features, const RunContext<Scalar>& ctx);

  ModelConfig config_;
};

/// Counted parameters against the published total, with the per-layer
/// breakdown and the share held by batch-norm affine terms.
struct ParamReconciliation {
  std::string arch;
  Index counted = 0;
  std::optional<double> published_millions;
  double relative_gap = 0;  // (counted - published) / published
  double tolerance = 0.02;
  bool within_tolerance = true;
  Index conv_weights = 0;
  Index batchnorm_affine = 0;
  Index classifier = 0;
  std::vector<ParamGroup> groups;
};

template <typename Scalar>
ParamReconciliation reconcile_params(Model<Scalar>& model, double tolerance = 0.02);

/// One record per layer group, then a summary record.
std::string to_jsonl(const ParamReconciliation& report);
std::string reconciliation_table(const ParamReconciliation& report);
/// Stage-by-stage layout: extent, channels, heads, patch, blocks.
std::string stage_table(const ModelConfig& config);

template <typename To, typename From>
void copy_state(StateRefs<From>& from, StateRefs<To>& to);

template <typename Scalar>
template <typename Other>
void Model<Scalar>::load_state_from(Model<Other>& other) {
  if (other.config().digest() != config_.digest()) {
    throw ConfigError("load_state_from: model configs differ (" + other.config().name + " vs " + config_.name + ")");
  }
  StateRefs<Other> from = other.state();
  StateRefs<Scalar> to = state();
  copy_state(from, to);
}

}  // namespace resformer
