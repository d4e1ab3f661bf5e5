// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/audit.hpp"
#include "resformer/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace resformer {

/// Class-conditional gratings plus Gaussian pixel noise.
struct SyntheticSpec {
  Index classes = 10;
  Index size = 32;
  Index channels = 3;
  Index train_per_class = 30;
  Index test_per_class = 20;
  double noise = 0.3;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Parses "classes=10,size=32,noise=0.3,train=30,test=20,seed=7" (any subset).
SyntheticSpec parse_synthetic_spec(const std::string& text);

struct Dataset {
  Tensor<float> images;  // [N, C, H, W], raw values
  std::vector<int> labels;
  Index train_count = 0;
  Index classes = 0;
  // Per-channel statistics of the training split, applied by `batch`.
  std::vector<float> mean;
  std::vector<float> stddev;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index test_count() const { return size() - train_count; }
  void validate() const;

  /// Normalized images for the given sample indices.
  template <typename Scalar>
  Tensor<Scalar> batch(const std::vector<Index>& indices) const;
  std::vector<int> batch_labels(const std::vector<Index>& indices) const;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Layout (little-endian): "RSDS", u32 version, u64 count, u64 train count,
/// u32 rank (4), u64 dims[1..3] (per-sample C, H, W), u32 classes, f32 mean[C],
/// f32 std[C], f32 images, u32 labels.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

/// "synthetic:SPEC" generates; anything else is a dataset file path.
Dataset open_dataset(const std::string& source);

struct TrainConfig {
  Index epochs = 50;
  Index batch_size = 64;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  SurrogateSpec surrogate;
  // Stop once an epoch's running training accuracy reaches this value (<= 0 disables).
  double target_train_accuracy = 0;

  void validate() const;
};

/// Decoupled weight decay Adam. Decay applies only to parameters flagged
/// `decay()` (convolution and linear weights).
template <typename Scalar>
class AdamW {
 public:
  AdamW(std::vector<Parameter<Scalar>*> parameters, const TrainConfig& config);

  void step(double lr);
  void zero_grad();
  Index steps() const { return steps_; }
  const std::vector<Parameter<Scalar>*>& decayed() const { return decayed_; }
  const std::vector<Parameter<Scalar>*>& undecayed() const { return undecayed_; }

 private:
  std::vector<Parameter<Scalar>*> parameters_;
  std::vector<Parameter<Scalar>*> decayed_;
  std::vector<Parameter<Scalar>*> undecayed_;
  std::vector<Tensor<Scalar>> m_;
  std::vector<Tensor<Scalar>> v_;
  TrainConfig config_;
  Index steps_ = 0;
};

/// Cosine decay from `lr` at step 0 to `lr_min` at `total_steps`.
double cosine_lr(const TrainConfig& config, Index step, Index total_steps);

struct EpochRecord {
  Index epoch = 0;
  double loss = 0;
  double train_accuracy = 0;  // running accuracy of the training-mode passes
  double lr = 0;
  std::vector<double> stage_rates;
  bool binary = true;      // every spike tensor seen was binary
  bool rates_valid = true; // every EMA stayed in [0, 1]
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::string message;
};

/// Runs surrogate-gradient training. On a nonfinite loss the parameters
/// revert to the last completed epoch and training stops with `diverged`.
/// `on_epoch` (optional) sees every record as it completes.
template <typename Scalar>
TrainResult train(Model<Scalar>& model, const Dataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct EvalResult {
  double accuracy = 0;
  Index correct = 0;
  Index count = 0;
  AuditRecord audit;
};

enum class Split { train, test };

/// Eval-mode accuracy on one split with SOP accounting.
template <typename Scalar>
EvalResult evaluate(Model<Scalar>& model, const Dataset& data, Split split, Index batch_size = 64,
                    bool verify = false);

/// Training-mode forward passes without gradients so that batch-norm running
/// statistics and firing-rate EMAs describe `images`.
template <typename Scalar>
void calibrate(Model<Scalar>& model, const Tensor<Scalar>& images, Index passes);

std::string to_jsonl(const EpochRecord& record);
std::string to_jsonl(const EvalResult& result, const std::string& split);

/// Keeps freed large blocks in the heap instead of returning them to the OS;
/// the training loop reallocates tensors of identical sizes every step.
void retain_freed_memory();

}  // namespace resformer
