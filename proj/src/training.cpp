// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/training.hpp"

#include <json.hpp>
#include <malloc.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace resformer {

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

namespace {

constexpr char kDatasetMagic[4] = {'R', 'S', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError(path + ": truncated dataset");
  return value;
}

Index parse_index(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw ConfigError("synthetic spec: " + key + " expects an integer, got '" + value + "'");
  return static_cast<Index>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw ConfigError("synthetic spec: " + key + " expects a number, got '" + value + "'");
  return v;
}

template <typename Scalar>
Index argmax_row(const Tensor<Scalar>& logits, Index row) {
  const Index classes = logits.dim(1);
  const Scalar* p = logits.data() + row * classes;
  return static_cast<Index>(std::max_element(p, p + classes) - p);
}

/// Flags any spike tensor holding a value other than 0 or 1.
template <typename Scalar>
class BinarityObserver : public SynapseObserver<Scalar> {
 public:
  void on_synapse(const SynapseRecord<Scalar>&) override {}
  void on_dual_spike_counts(const std::string&, const DualSpikeCounts&) override {}
  void on_neuron(const std::string& layer, const Tensor<Scalar>& spikes) override {
    const auto& a = spikes.array();
    if (!((a == Scalar(0)) || (a == Scalar(1))).all()) {
      binary = false;
      if (first_violation.empty()) first_violation = layer;
    }
  }

  bool binary = true;
  std::string first_violation;
};

template <typename Scalar>
struct Snapshot {
  std::vector<Tensor<Scalar>> parameters;
  std::vector<BatchNormState<Scalar>> batchnorms;
  std::vector<FiringRateEMA> rates;

  static Snapshot take(StateRefs<Scalar>& refs) {
    Snapshot s;
    for (auto* p : refs.parameters) s.parameters.push_back(p->value());
    for (auto& [name, bn] : refs.batchnorms) s.batchnorms.push_back(*bn);
    for (auto& [name, ema] : refs.rates) s.rates.push_back(*ema);
    return s;
  }

  void restore(StateRefs<Scalar>& refs) const {
    for (std::size_t i = 0; i < parameters.size(); ++i) refs.parameters[i]->value() = parameters[i];
    for (std::size_t i = 0; i < batchnorms.size(); ++i) *refs.batchnorms[i].second = batchnorms[i];
    for (std::size_t i = 0; i < rates.size(); ++i) *refs.rates[i].second = rates[i];
  }
};

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic spec: classes must be at least 2");
  if (size < 4) throw ConfigError("synthetic spec: size must be at least 4");
  if (channels < 1) throw ConfigError("synthetic spec: channels must be positive");
  if (train_per_class < 1) throw ConfigError("synthetic spec: train must be positive");
  if (test_per_class < 0) throw ConfigError("synthetic spec: test must be non-negative");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ConfigError("synthetic spec: noise must be finite and >= 0");
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "classes") {
      spec.classes = parse_index(key, value);
    } else if (key == "size") {
      spec.size = parse_index(key, value);
    } else if (key == "channels") {
      spec.channels = parse_index(key, value);
    } else if (key == "train") {
      spec.train_per_class = parse_index(key, value);
    } else if (key == "test") {
      spec.test_per_class = parse_index(key, value);
    } else if (key == "noise") {
      spec.noise = parse_double(key, value);
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(parse_index(key, value));
    } else {
      throw ConfigError("synthetic spec: unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw FormatError("dataset: images must be [N, C, H, W]");
  if (images.dim(0) != size()) throw FormatError("dataset: image and label counts differ");
  if (train_count < 1 || train_count > size()) throw FormatError("dataset: train count out of range");
  if (classes < 2) throw FormatError("dataset: needs at least two classes");
  const Index c = images.dim(1);
  if (static_cast<Index>(mean.size()) != c || static_cast<Index>(stddev.size()) != c) {
    throw FormatError("dataset: channel statistics do not match the channel count");
  }
  for (float s : stddev) {
    if (!(s > 0)) throw FormatError("dataset: channel std must be positive");
  }
  for (int label : labels) {
    if (label < 0 || label >= classes) throw FormatError("dataset: label out of range");
  }
}

template <typename Scalar>
Tensor<Scalar> Dataset::batch(const std::vector<Index>& indices) const {
  const Index c = images.dim(1), hw = images.dim(2) * images.dim(3);
  const Index per = c * hw;
  Tensor<Scalar> out({static_cast<Index>(indices.size()), c, images.dim(2), images.dim(3)});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Index i = indices[b];
    if (i < 0 || i >= size()) throw DimensionError("dataset batch: index out of range");
    for (Index ch = 0; ch < c; ++ch) {
      const float* src = images.data() + i * per + ch * hw;
      Scalar* dst = out.data() + static_cast<Index>(b) * per + ch * hw;
      const float m = mean[ch], inv = 1.0f / stddev[ch];
      for (Index k = 0; k < hw; ++k) dst[k] = static_cast<Scalar>((src[k] - m) * inv);
    }
  }
  return out;
}

std::vector<int> Dataset::batch_labels(const std::vector<Index>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Index n_train = spec.classes * spec.train_per_class;
  const Index n = n_train + spec.classes * spec.test_per_class;
  const Index c = spec.channels, s = spec.size, hw = s * s;

  // One fixed grating per class: orientation, spatial frequency and a
  // per-channel amplitude and phase.
  std::vector<std::vector<float>> patterns(static_cast<std::size_t>(spec.classes));
  const double two_pi = 2.0 * std::numbers::pi;
  for (Index k = 0; k < spec.classes; ++k) {
    const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
    const double freq = 2.0 + static_cast<double>(k % 3);
    auto& p = patterns[static_cast<std::size_t>(k)];
    p.resize(static_cast<std::size_t>(c * hw));
    for (Index ch = 0; ch < c; ++ch) {
      const double hue = static_cast<double>(k) / static_cast<double>(spec.classes) +
                         static_cast<double>(ch) / static_cast<double>(c);
      const double amp = 0.6 + 0.4 * std::cos(two_pi * hue);
      const double phase = std::numbers::pi * static_cast<double>(ch) / 3.0;
      for (Index y = 0; y < s; ++y) {
        for (Index x = 0; x < s; ++x) {
          const double u = (static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta)) /
                           static_cast<double>(s);
          p[static_cast<std::size_t>(ch * hw + y * s + x)] =
              static_cast<float>(amp * std::sin(two_pi * freq * u + phase));
        }
      }
    }
  }

  Dataset data;
  data.images = Tensor<float>({n, c, s, s});
  data.labels.resize(static_cast<std::size_t>(n));
  data.train_count = n_train;
  data.classes = spec.classes;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    // Labels cycle through the classes so every prefix is balanced.
    const Index local = i < n_train ? i : i - n_train;
    const Index label = local % spec.classes;
    data.labels[static_cast<std::size_t>(i)] = static_cast<int>(label);
    const auto& p = patterns[static_cast<std::size_t>(label)];
    float* dst = data.images.data() + i * c * hw;
    for (Index k = 0; k < c * hw; ++k) {
      const double noise = spec.noise > 0 ? spec.noise * gauss(rng) : 0.0;
      dst[k] = static_cast<float>(p[static_cast<std::size_t>(k)] + noise);
    }
  }

  data.mean.assign(static_cast<std::size_t>(c), 0.0f);
  data.stddev.assign(static_cast<std::size_t>(c), 1.0f);
  for (Index ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (Index i = 0; i < n_train; ++i) {
      const float* src = data.images.data() + i * c * hw + ch * hw;
      for (Index k = 0; k < hw; ++k) {
        sum += src[k];
        sq += static_cast<double>(src[k]) * src[k];
      }
    }
    const double count = static_cast<double>(n_train * hw);
    const double m = sum / count;
    const double var = std::max(sq / count - m * m, 0.0);
    data.mean[static_cast<std::size_t>(ch)] = static_cast<float>(m);
    data.stddev[static_cast<std::size_t>(ch)] = static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0);
  }
  return data;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(kDatasetMagic, 4);
  put(out, kDatasetVersion);
  put(out, static_cast<std::uint64_t>(dataset.size()));
  put(out, static_cast<std::uint64_t>(dataset.train_count));
  put(out, static_cast<std::uint32_t>(4));
  for (Index axis = 1; axis < 4; ++axis) put(out, static_cast<std::uint64_t>(dataset.images.dim(axis)));
  put(out, static_cast<std::uint32_t>(dataset.classes));
  out.write(reinterpret_cast<const char*>(dataset.mean.data()),
            static_cast<std::streamsize>(dataset.mean.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(dataset.stddev.data()),
            static_cast<std::streamsize>(dataset.stddev.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(dataset.images.data()),
            static_cast<std::streamsize>(dataset.images.size() * static_cast<Index>(sizeof(float))));
  for (int label : dataset.labels) put(out, static_cast<std::uint32_t>(label));
  if (!out) throw FormatError(path + ": write failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open dataset");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError(path + ": bad magic");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kDatasetVersion) {
    throw FormatError(path + ": unsupported dataset version " + std::to_string(version));
  }
  const auto count = static_cast<Index>(get<std::uint64_t>(in, path));
  const auto train_count = static_cast<Index>(get<std::uint64_t>(in, path));
  if (get<std::uint32_t>(in, path) != 4) throw FormatError(path + ": images must have rank 4");
  Shape shape{count, 0, 0, 0};
  for (Index axis = 1; axis < 4; ++axis) shape[static_cast<std::size_t>(axis)] = static_cast<Index>(get<std::uint64_t>(in, path));
  if (count < 1 || shape[1] < 1 || shape[2] < 1 || shape[3] < 1 || shape[1] * shape[2] * shape[3] > (Index{1} << 30)) {
    throw FormatError(path + ": implausible dataset shape");
  }
  Dataset data;
  data.train_count = train_count;
  data.classes = static_cast<Index>(get<std::uint32_t>(in, path));
  data.mean.resize(static_cast<std::size_t>(shape[1]));
  data.stddev.resize(static_cast<std::size_t>(shape[1]));
  for (float& m : data.mean) m = get<float>(in, path);
  for (float& s : data.stddev) s = get<float>(in, path);
  data.images = Tensor<float>(shape);
  if (!in.read(reinterpret_cast<char*>(data.images.data()),
               static_cast<std::streamsize>(data.images.size() * static_cast<Index>(sizeof(float))))) {
    throw FormatError(path + ": truncated dataset");
  }
  data.labels.resize(static_cast<std::size_t>(count));
  for (int& label : data.labels) label = static_cast<int>(get<std::uint32_t>(in, path));
  data.validate();
  return data;
}

Dataset open_dataset(const std::string& source) {
  const std::string prefix = "synthetic:";
  if (source.rfind(prefix, 0) == 0) return generate_synthetic(parse_synthetic_spec(source.substr(prefix.size())));
  if (source == "synthetic") return generate_synthetic(SyntheticSpec{});
  return load_dataset(source);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (!(lr > 0) || !(lr_min >= 0) || lr_min > lr) throw ConfigError("train: need 0 <= lr_min <= lr, lr > 0");
  if (!(weight_decay >= 0)) throw ConfigError("train: weight decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("train: eps must be positive");
  surrogate.validate();
}

template <typename Scalar>
AdamW<Scalar>::AdamW(std::vector<Parameter<Scalar>*> parameters, const TrainConfig& config)
    : parameters_(std::move(parameters)), config_(config) {
  config_.validate();
  for (auto* p : parameters_) {
    (p->decay() ? decayed_ : undecayed_).push_back(p);
    m_.emplace_back(p->value().shape());
    v_.emplace_back(p->value().shape());
  }
}

template <typename Scalar>
void AdamW<Scalar>::step(double lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const Scalar step_size = static_cast<Scalar>(lr / correction1);
  const Scalar inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(correction2));
  const Scalar eps = static_cast<Scalar>(config_.eps);
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    Parameter<Scalar>& p = *parameters_[i];
    auto& w = p.value().array();
    const auto& g = p.grad().array();
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    if (p.decay()) w *= static_cast<Scalar>(1.0 - lr * config_.weight_decay);
    m = static_cast<Scalar>(b1) * m + static_cast<Scalar>(1.0 - b1) * g;
    v = static_cast<Scalar>(b2) * v + static_cast<Scalar>(1.0 - b2) * g.square();
    w -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
  }
}

template <typename Scalar>
void AdamW<Scalar>::zero_grad() {
  for (auto* p : parameters_) p->zero_grad();
}

double cosine_lr(const TrainConfig& config, Index step, Index total_steps) {
  if (total_steps <= 0) return config.lr;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename Scalar>
TrainResult train(Model<Scalar>& model, const Dataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  data.validate();
  const ModelConfig& mc = model.config();
  if (data.images.dim(1) != mc.in_channels || data.images.dim(2) != mc.input_height ||
      data.images.dim(3) != mc.input_width) {
    throw DimensionError("train: dataset images do not match the model input");
  }
  if (data.classes > mc.num_classes) throw DimensionError("train: dataset has more classes than the model");

  StateRefs<Scalar> refs = model.state();
  AdamW<Scalar> optimizer(refs.parameters, config);
  optimizer.zero_grad();

  const Index n = data.train_count;
  const Index steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const Index total_steps = steps_per_epoch * config.epochs;

  TrainResult result;
  std::vector<Index> order(static_cast<std::size_t>(n));
  Index step = 0;
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const Snapshot<Scalar> last_good = Snapshot<Scalar>::take(refs);
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 shuffle_rng(config.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0;
    Index correct = 0;
    for (Index start = 0; start < n; start += config.batch_size) {
      const Index end = std::min(n, start + config.batch_size);
      const std::vector<Index> idx(order.begin() + start, order.begin() + end);
      const Tensor<Scalar> images = data.batch<Scalar>(idx);
      const std::vector<int> labels = data.batch_labels(idx);

      BinarityObserver<Scalar> observer;
      RunContext<Scalar> ctx = model.context(true);
      ctx.surrogate = config.surrogate;
      ctx.observer = &observer;
      const double lr = cosine_lr(config, step, total_steps);
      Var<Scalar> logits = model.forward(images, ctx);
      Var<Scalar> loss = cross_entropy(logits, labels);
      const double loss_value = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(loss_value)) {
        last_good.restore(refs);
        result.diverged = true;
        result.message = "nonfinite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                         "; parameters restored to the end of epoch " + std::to_string(epoch - 1);
        return result;
      }
      if (!observer.binary) {
        record.binary = false;
      }
      backward(loss);
      optimizer.step(lr);
      optimizer.zero_grad();
      ++step;
      record.lr = lr;

      for (const auto& [name, ema] : refs.rates) {
        if (ema->initialized && !(ema->value >= 0.0 && ema->value <= 1.0)) record.rates_valid = false;
      }
      loss_sum += loss_value * static_cast<double>(end - start);
      for (Index b = 0; b < end - start; ++b) {
        if (argmax_row(logits.value(), b) == labels[static_cast<std::size_t>(b)]) ++correct;
      }
    }
    record.loss = loss_sum / static_cast<double>(n);
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    record.stage_rates = model.stage_input_rates();
    result.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
    if (config.target_train_accuracy > 0 && record.train_accuracy >= config.target_train_accuracy) break;
  }
  return result;
}

template <typename Scalar>
EvalResult evaluate(Model<Scalar>& model, const Dataset& data, Split split, Index batch_size, bool verify) {
  data.validate();
  if (batch_size < 1) throw ConfigError("evaluate: batch size must be positive");
  const Index begin = split == Split::train ? 0 : data.train_count;
  const Index end = split == Split::train ? data.train_count : data.size();
  EvalResult result;
  NoGradGuard no_grad;
  for (Index start = begin; start < end; start += batch_size) {
    const Index stop = std::min(end, start + batch_size);
    std::vector<Index> idx;
    for (Index i = start; i < stop; ++i) idx.push_back(i);
    AuditObserver<Scalar> observer(verify);
    RunContext<Scalar> ctx = model.context(false);
    ctx.observer = &observer;
    const Var<Scalar> logits = model.forward(data.batch<Scalar>(idx), ctx);
    for (Index b = 0; b < stop - start; ++b) {
      if (argmax_row(logits.value(), b) == data.labels[static_cast<std::size_t>(start + b)]) ++result.correct;
    }
    merge_audit(result.audit, observer.finish(stop - start, ctx.time_steps));
  }
  result.count = end - begin;
  result.accuracy = result.count > 0 ? static_cast<double>(result.correct) / static_cast<double>(result.count) : 0.0;
  return result;
}

template <typename Scalar>
void calibrate(Model<Scalar>& model, const Tensor<Scalar>& images, Index passes) {
  NoGradGuard no_grad;
  const RunContext<Scalar> ctx = model.context(true);
  for (Index i = 0; i < passes; ++i) model.forward(images, ctx);
}

std::string to_jsonl(const EpochRecord& record) {
  nlohmann::ordered_json j;
  j["record"] = "epoch";
  j["epoch"] = record.epoch;
  j["loss"] = record.loss;
  j["train_accuracy"] = record.train_accuracy;
  j["lr"] = record.lr;
  j["stage_rate_x"] = record.stage_rates;
  j["binary_spikes"] = record.binary;
  j["rates_in_unit_interval"] = record.rates_valid;
  return j.dump() + "\n";
}

std::string to_jsonl(const EvalResult& result, const std::string& split) {
  nlohmann::ordered_json j;
  j["record"] = "eval";
  j["split"] = split;
  j["images"] = result.count;
  j["correct"] = result.correct;
  j["accuracy"] = result.accuracy;
  j["sops_per_image"] = result.audit.total_sops;
  j["sops_g"] = result.audit.sops_g();
  j["energy_mj"] = result.audit.energy_mj();
  return j.dump() + "\n";
}

void retain_freed_memory() {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
}

#define RESFORMER_INSTANTIATE_TRAINING(S)                                                                   \
  template Tensor<S> Dataset::batch<S>(const std::vector<Index>&) const;                                    \
  template class AdamW<S>;                                                                                  \
  template TrainResult train(Model<S>&, const Dataset&, const TrainConfig&,                                 \
                             const std::function<void(const EpochRecord&)>&);                               \
  template EvalResult evaluate(Model<S>&, const Dataset&, Split, Index, bool);                              \
  template void calibrate(Model<S>&, const Tensor<S>&, Index);

RESFORMER_INSTANTIATE_TRAINING(float)
RESFORMER_INSTANTIATE_TRAINING(double)

}  // namespace resformer
