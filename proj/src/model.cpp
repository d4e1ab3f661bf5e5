// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/model.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <iomanip>
#include <fstream>
#include <map>
#include <sstream>

namespace resformer {

namespace {

std::string stage_key(std::size_t stage, const char* field) {
  return "stage" + std::to_string(stage + 1) + "." + field;
}

ModelConfig imagenet_config(std::string name, Index d1, Index d2, Index d3, Index h1, Index h2, Index h3) {
  ModelConfig c;
  c.name = std::move(name);
  c.stages = {{d1, h1, 4, 4, 64, 1}, {d2, h2, 2, 4, 64, 2}, {d3, h3, 1, 4, 64, 3}};
  return c;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<std::pair<Index, Index>> ModelConfig::stage_extents() const {
  Index h = conv_output_extent(input_height, stem.kernel, stem.stride, stem.padding);
  Index w = conv_output_extent(input_width, stem.kernel, stem.stride, stem.padding);
  if (stem.pool) {
    h = conv_output_extent(h, stem.pool_window, stem.pool_stride, stem.pool_padding);
    w = conv_output_extent(w, stem.pool_window, stem.pool_stride, stem.pool_padding);
  }
  std::vector<std::pair<Index, Index>> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i > 0) {
      h = conv_output_extent(h, 3, 2, 1);
      w = conv_output_extent(w, 3, 2, 1);
    }
    out.emplace_back(h, w);
  }
  return out;
}

void ModelConfig::validate() const {
  auto positive = [](Index v, const std::string& field) {
    if (v <= 0) throw ConfigError(field + " must be positive, got " + std::to_string(v));
  };
  positive(input_height, "input_height");
  positive(input_width, "input_width");
  positive(in_channels, "in_channels");
  positive(time_steps, "time_steps");
  positive(num_classes, "num_classes");
  positive(stem.kernel, "stem.kernel");
  positive(stem.stride, "stem.stride");
  if (stem.padding < 0) throw ConfigError("stem.padding must be non-negative");
  if (stem.pool) {
    positive(stem.pool_window, "stem.pool_window");
    positive(stem.pool_stride, "stem.pool_stride");
  }
  if (stages.empty()) throw ConfigError("stages: at least one stage is required");
  if (input_height + 2 * stem.padding < stem.kernel || input_width + 2 * stem.padding < stem.kernel) {
    throw ConfigError("input_height/input_width smaller than stem.kernel");
  }
  const auto extents = stage_extents();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    positive(s.dim, stage_key(i, "dim"));
    positive(s.heads, stage_key(i, "heads"));
    positive(s.patch, stage_key(i, "patch"));
    positive(s.ratio, stage_key(i, "ratio"));
    positive(s.group_width, stage_key(i, "group_width"));
    positive(s.blocks, stage_key(i, "blocks"));
    if (s.dim % s.heads != 0) {
      throw ConfigError(stage_key(i, "heads") + ": " + std::to_string(s.dim) + " channels not divisible by " +
                        std::to_string(s.heads) + " heads");
    }
    const auto [h, w] = extents[i];
    if (h <= 0 || w <= 0 || h % s.patch != 0 || w % s.patch != 0) {
      throw ConfigError(stage_key(i, "patch") + ": feature map " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible by patch " + std::to_string(s.patch));
    }
    if ((s.dim * s.ratio) % s.group_width != 0) {
      throw ConfigError(stage_key(i, "group_width") + ": hidden width " + std::to_string(s.dim * s.ratio) +
                        " not divisible by " + std::to_string(s.group_width));
    }
  }
}

std::string ModelConfig::echo() const {
  std::ostringstream out;
  out << "name = " << name << "\n"
      << "input_height = " << input_height << "\n"
      << "input_width = " << input_width << "\n"
      << "in_channels = " << in_channels << "\n"
      << "time_steps = " << time_steps << "\n"
      << "num_classes = " << num_classes << "\n"
      << "stem.kernel = " << stem.kernel << "\n"
      << "stem.stride = " << stem.stride << "\n"
      << "stem.padding = " << stem.padding << "\n"
      << "stem.pool = " << (stem.pool ? "true" : "false") << "\n"
      << "stem.pool_window = " << stem.pool_window << "\n"
      << "stem.pool_stride = " << stem.pool_stride << "\n"
      << "stem.pool_padding = " << stem.pool_padding << "\n"
      << "stages = " << stages.size() << "\n";
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    out << stage_key(i, "dim") << " = " << s.dim << "\n"
        << stage_key(i, "heads") << " = " << s.heads << "\n"
        << stage_key(i, "patch") << " = " << s.patch << "\n"
        << stage_key(i, "ratio") << " = " << s.ratio << "\n"
        << stage_key(i, "group_width") << " = " << s.group_width << "\n"
        << stage_key(i, "blocks") << " = " << s.blocks << "\n";
  }
  return out.str();
}

std::uint64_t ModelConfig::digest() const { return fnv1a(echo()); }

ModelConfig registry_config(const std::string& arch) {
  if (arch == "Ti") return imagenet_config("Ti", 64, 192, 384, 1, 3, 6);
  if (arch == "S") return imagenet_config("S", 64, 256, 512, 1, 4, 8);
  if (arch == "M") return imagenet_config("M", 64, 384, 768, 1, 6, 12);
  if (arch == "L") return imagenet_config("L", 128, 512, 1024, 1, 8, 16);
  if (arch == "Nano") {
    ModelConfig c;
    c.name = "Nano";
    c.input_height = c.input_width = 32;
    c.stem = {3, 1, 1, false, 3, 2, 1};
    c.stages = {{32, 1, 4, 4, 64, 1}, {64, 2, 2, 4, 64, 1}, {128, 4, 1, 4, 64, 1}};
    c.num_classes = 10;
    return c;
  }
  throw ConfigError("unknown architecture '" + arch + "' (expected Ti, S, M, L or Nano)");
}

std::vector<std::string> registry_names() { return {"Ti", "S", "M", "L", "Nano"}; }

std::optional<double> published_param_millions(const std::string& arch) {
  static const std::map<std::string, double> table{{"Ti", 11.14}, {"S", 17.76}, {"M", 35.52}, {"L", 60.38}};
  const auto it = table.find(arch);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

class ConfigReader {
 public:
  ConfigReader(std::string source, Index line) : source_(std::move(source)), line_(line) {}

  [[noreturn]] void fail(const std::string& message) const {
    throw ConfigError(source_ + ":" + std::to_string(line_) + ": " + message);
  }

  Index integer(const std::string& key, const std::string& value) const {
    Index out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) fail(key + ": expected an integer, got '" + value + "'");
    return out;
  }

  bool boolean(const std::string& key, const std::string& value) const {
    if (value == "true") return true;
    if (value == "false") return false;
    fail(key + ": expected true or false, got '" + value + "'");
  }

 private:
  std::string source_;
  Index line_;
};

void apply_stage_key(ModelConfig& c, const ConfigReader& r, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  Index stage = 0;
  const std::string number = key.substr(5, dot == std::string::npos ? std::string::npos : dot - 5);
  const auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), stage);
  if (dot == std::string::npos || ec != std::errc() || ptr != number.data() + number.size()) {
    r.fail("unknown key '" + key + "'");
  }
  if (stage < 1 || stage > static_cast<Index>(c.stages.size())) {
    r.fail(key + ": stage " + std::to_string(stage) + " does not exist (set 'stages' first)");
  }
  StageSpec& s = c.stages[static_cast<std::size_t>(stage - 1)];
  const std::string field = key.substr(dot + 1);
  const Index v = r.integer(key, value);
  if (field == "dim") s.dim = v;
  else if (field == "heads") s.heads = v;
  else if (field == "patch") s.patch = v;
  else if (field == "ratio") s.ratio = v;
  else if (field == "group_width") s.group_width = v;
  else if (field == "blocks") s.blocks = v;
  else r.fail("unknown key '" + key + "'");
}

}  // namespace

ModelConfig parse_config(std::istream& in, const std::string& source) {
  ModelConfig c = registry_config("Nano");
  std::string raw;
  Index line_no = 0;
  bool any_key = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const ConfigReader r(source, line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) r.fail(key + ": missing value");

    if (key == "arch") {
      if (any_key) r.fail("'arch' must be the first key");
      try {
        c = registry_config(value);
      } catch (const ConfigError& e) {
        r.fail(e.what());
      }
    } else if (key == "name") {
      c.name = value;
    } else if (key == "input_size") {
      c.input_height = c.input_width = r.integer(key, value);
    } else if (key == "input_height") {
      c.input_height = r.integer(key, value);
    } else if (key == "input_width") {
      c.input_width = r.integer(key, value);
    } else if (key == "in_channels") {
      c.in_channels = r.integer(key, value);
    } else if (key == "time_steps") {
      c.time_steps = r.integer(key, value);
    } else if (key == "num_classes") {
      c.num_classes = r.integer(key, value);
    } else if (key == "stem.kernel") {
      c.stem.kernel = r.integer(key, value);
    } else if (key == "stem.stride") {
      c.stem.stride = r.integer(key, value);
    } else if (key == "stem.padding") {
      c.stem.padding = r.integer(key, value);
    } else if (key == "stem.pool") {
      c.stem.pool = r.boolean(key, value);
    } else if (key == "stem.pool_window") {
      c.stem.pool_window = r.integer(key, value);
    } else if (key == "stem.pool_stride") {
      c.stem.pool_stride = r.integer(key, value);
    } else if (key == "stem.pool_padding") {
      c.stem.pool_padding = r.integer(key, value);
    } else if (key == "stages") {
      const Index n = r.integer(key, value);
      if (n < 1 || n > 16) r.fail("stages: expected 1..16, got " + value);
      c.stages.resize(static_cast<std::size_t>(n), c.stages.empty() ? StageSpec{} : c.stages.back());
    } else if (key.rfind("stage", 0) == 0) {
      apply_stage_key(c, r, key, value);
    } else {
      r.fail("unknown key '" + key + "'");
    }
    any_key = true;
  }
  c.validate();
  return c;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

template <typename Scalar>
ResformerBlock<Scalar>::ResformerBlock(const std::string& name, const StageSpec& spec, std::mt19937_64& rng)
    : attention(name + ".attn", spec.dim, spec.heads, spec.patch, rng),
      ffn(name + ".ffn", {spec.dim, spec.ratio, spec.group_width}, rng) {}

template <typename Scalar>
Var<Scalar> ResformerBlock<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx) {
  const Var<Scalar> y = attention.forward(input, ctx) + input;
  return ffn.forward(y, ctx) + y;
}

template <typename Scalar>
void ResformerBlock<Scalar>::collect(StateRefs<Scalar>& refs) {
  attention.collect(refs);
  ffn.collect(refs);
}

template <typename Scalar>
Downsample<Scalar>::Downsample(const std::string& name, Index in_channels, Index out_channels, std::mt19937_64& rng)
    : sn(name + ".sn"), conv(name + ".conv", in_channels, out_channels, 3, {2, 1, 1}, rng), bn(name + ".bn", out_channels) {}

template <typename Scalar>
Var<Scalar> Downsample<Scalar>::forward(const Var<Scalar>& input, const RunContext<Scalar>& ctx) {
  return bn.forward(conv.forward(sn.forward(input, ctx), ctx), ctx);
}

template <typename Scalar>
void Downsample<Scalar>::collect(StateRefs<Scalar>& refs) {
  conv.collect(refs);
  bn.collect(refs);
}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const Index d1 = config_.stages.front().dim;
  stem_conv = Conv2d<Scalar>("stem.conv", config_.in_channels, d1, config_.stem.kernel,
                             {config_.stem.stride, config_.stem.padding, 1}, rng);
  stem_bn = BatchNorm2d<Scalar>("stem.bn", d1);
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    const StageSpec& spec = config_.stages[i];
    const std::string prefix = "stage" + std::to_string(i + 1);
    if (i > 0) downsamples.emplace_back(prefix + ".down", config_.stages[i - 1].dim, spec.dim, rng);
    std::vector<ResformerBlock<Scalar>> blocks;
    for (Index b = 0; b < spec.blocks; ++b) {
      blocks.emplace_back(prefix + ".block" + std::to_string(b + 1), spec, rng);
    }
    stages.push_back(std::move(blocks));
  }
  head_sn = SpikingLayer<Scalar>("head.sn");
  classifier = Linear<Scalar>("head.fc", config_.stages.back().dim, config_.num_classes, rng);
}

template <typename Scalar>
RunContext<Scalar> Model<Scalar>::context(bool training) const {
  RunContext<Scalar> ctx;
  ctx.time_steps = config_.time_steps;
  ctx.training = training;
  return ctx;
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& images, const RunContext<Scalar>& ctx) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.input_height ||
      images.dim(3) != config_.input_width) {
    throw DimensionError("Model: expected images [B, " + std::to_string(config_.in_channels) + ", " +
                         std::to_string(config_.input_height) + ", " + std::to_string(config_.input_width) +
                         "], got " + to_string(images.shape()));
  }
  const Index steps = ctx.time_steps;
  const Index batch = images.dim(0);
  Tensor<Scalar> repeated({steps * batch, images.dim(1), images.dim(2), images.dim(3)});
  for (Index t = 0; t < steps; ++t) repeated.array().segment(t * images.size(), images.size()) = images.array();

  Var<Scalar> x = stem_bn.forward(stem_conv.forward(Var<Scalar>(std::move(repeated)), ctx, false), ctx);
  if (config_.stem.pool) {
    x = maxpool2d(x, config_.stem.pool_window, config_.stem.pool_stride, config_.stem.pool_padding);
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i > 0) x = downsamples[i - 1].forward(x, ctx);
    for (ResformerBlock<Scalar>& block : stages[i]) x = block.forward(x, ctx);
  }
  return time_mean(head(x, ctx), steps);
}

template <typename Scalar>
Var<Scalar> Model<Scalar>::head(const Var<Scalar>& features, const RunContext<Scalar>& ctx) {
  const Var<Scalar> spikes = head_sn.forward(features, ctx);
  const Var<Scalar> logits = classifier.forward(global_avg_pool(spikes));
  if (ctx.observer) {
    // Pooling then a dense layer is a convolution whose kernel spans the
    // whole map with every tap equal to weight / (H * W).
    const Tensor<Scalar>& s = spikes.value();
    const Index n = s.dim(0), c = s.dim(1), hw = s.dim(2) * s.dim(3), k = config_.num_classes;
    Tensor<Scalar> kernel({k, c, s.dim(2), s.dim(3)});
    const Tensor<Scalar>& w = classifier.weight.value();
    for (Index i = 0; i < k * c; ++i) kernel.array().segment(i * hw, hw).setConstant(w[i] / Scalar(hw));
    Tensor<Scalar> current({n, k, 1, 1});
    for (Index i = 0; i < n; ++i) {
      current.array().segment(i * k, k) =
          logits.value().array().segment(i * k, k) - classifier.bias.value().array();
    }
    ctx.observer->on_synapse({classifier.name, true, s, kernel, Conv2dGeometry{}, current, ctx.time_steps});
  }
  return logits;
}

template <typename Scalar>
StateRefs<Scalar> Model<Scalar>::state() {
  StateRefs<Scalar> refs;
  stem_conv.collect(refs);
  stem_bn.collect(refs);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i > 0) downsamples[i - 1].collect(refs);
    for (ResformerBlock<Scalar>& block : stages[i]) block.collect(refs);
  }
  classifier.collect(refs);
  return refs;
}

template <typename Scalar>
Index Model<Scalar>::param_count() {
  Index total = 0;
  for (Parameter<Scalar>* p : state().parameters) total += p->value().size();
  return total;
}

template <typename Scalar>
std::vector<ParamGroup> Model<Scalar>::param_breakdown() {
  std::vector<ParamGroup> out;
  auto add = [&out](const std::string& name, auto&... modules) {
    StateRefs<Scalar> refs;
    (modules.collect(refs), ...);
    Index count = 0;
    for (Parameter<Scalar>* p : refs.parameters) count += p->value().size();
    out.push_back({name, count});
  };
  add("stem", stem_conv, stem_bn);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i + 1);
    if (i > 0) add(prefix + ".down", downsamples[i - 1]);
    for (std::size_t b = 0; b < stages[i].size(); ++b) {
      const std::string block = prefix + ".block" + std::to_string(b + 1);
      add(block + ".attn", stages[i][b].attention);
      add(block + ".ffn", stages[i][b].ffn);
    }
  }
  add("head.fc", classifier);
  return out;
}

template <typename Scalar>
std::vector<double> Model<Scalar>::stage_input_rates() const {
  std::vector<double> out;
  for (const auto& blocks : stages) {
    double sum = 0.0;
    for (const ResformerBlock<Scalar>& block : blocks) sum += block.attention.rate_x.value;
    out.push_back(blocks.empty() ? 0.0 : sum / static_cast<double>(blocks.size()));
  }
  return out;
}

template <typename To, typename From>
void copy_state(StateRefs<From>& from, StateRefs<To>& to) {
  if (from.parameters.size() != to.parameters.size() || from.batchnorms.size() != to.batchnorms.size() ||
      from.rates.size() != to.rates.size()) {
    throw ConfigError("copy_state: models have different layouts");
  }
  for (std::size_t i = 0; i < from.parameters.size(); ++i) {
    const Tensor<From>& src = from.parameters[i]->value();
    Tensor<To>& dst = to.parameters[i]->value();
    if (src.shape() != dst.shape() || from.parameters[i]->name() != to.parameters[i]->name()) {
      throw ConfigError("copy_state: parameter " + from.parameters[i]->name() + " does not match");
    }
    dst.array() = src.array().template cast<To>();
  }
  for (std::size_t i = 0; i < from.batchnorms.size(); ++i) {
    const BatchNormState<From>& src = *from.batchnorms[i].second;
    BatchNormState<To>& dst = *to.batchnorms[i].second;
    dst.gamma = src.gamma.template cast<To>();
    dst.beta = src.beta.template cast<To>();
    dst.running_mean = src.running_mean.template cast<To>();
    dst.running_var = src.running_var.template cast<To>();
    dst.eps = To(src.eps);
    dst.momentum = To(src.momentum);
    dst.mode = src.mode;
  }
  for (std::size_t i = 0; i < from.rates.size(); ++i) *to.rates[i].second = *from.rates[i].second;
}

template <typename Scalar>
ParamReconciliation reconcile_params(Model<Scalar>& model, double tolerance) {
  ParamReconciliation r;
  r.arch = model.config().name;
  r.tolerance = tolerance;
  r.groups = model.param_breakdown();
  const auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (Parameter<Scalar>* p : model.state().parameters) {
    const Index n = p->value().size();
    r.counted += n;
    if (p->name().rfind("head.fc.", 0) == 0) {
      r.classifier += n;
    } else if (ends_with(p->name(), ".gamma") || ends_with(p->name(), ".beta")) {
      r.batchnorm_affine += n;
    } else {
      r.conv_weights += n;
    }
  }
  r.published_millions = published_param_millions(r.arch);
  if (r.published_millions) {
    const double published = *r.published_millions * 1e6;
    r.relative_gap = (static_cast<double>(r.counted) - published) / published;
    r.within_tolerance = std::abs(r.relative_gap) <= tolerance;
  }
  return r;
}

std::string to_jsonl(const ParamReconciliation& r) {
  std::string out;
  for (const ParamGroup& g : r.groups) {
    nlohmann::ordered_json j;
    j["record"] = "param_group";
    j["arch"] = r.arch;
    j["group"] = g.name;
    j["params"] = g.count;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json j;
  j["record"] = "param_summary";
  j["arch"] = r.arch;
  j["params"] = r.counted;
  j["conv_weights"] = r.conv_weights;
  j["batchnorm_affine"] = r.batchnorm_affine;
  j["classifier"] = r.classifier;
  if (r.published_millions) {
    j["published_millions"] = *r.published_millions;
    j["relative_gap"] = r.relative_gap;
  } else {
    j["published_millions"] = nullptr;
    j["relative_gap"] = nullptr;
  }
  j["tolerance"] = r.tolerance;
  j["within_tolerance"] = r.within_tolerance;
  return out + j.dump() + "\n";
}

std::string reconciliation_table(const ParamReconciliation& r) {
  std::ostringstream os;
  os << std::fixed;
  for (const ParamGroup& g : r.groups) {
    os << "  " << std::left << std::setw(24) << g.name << std::right << std::setw(12) << g.count << "\n";
  }
  os << "  " << std::left << std::setw(24) << "conv weights" << std::right << std::setw(12) << r.conv_weights << "\n";
  os << "  " << std::left << std::setw(24) << "batch-norm affine" << std::right << std::setw(12) << r.batchnorm_affine
     << "\n";
  os << "  " << std::left << std::setw(24) << "classifier" << std::right << std::setw(12) << r.classifier << "\n";
  os << "  " << std::left << std::setw(24) << "total" << std::right << std::setw(12) << r.counted << "\n";
  if (r.published_millions) {
    os << std::setprecision(2) << "  published " << *r.published_millions << "M, gap "
       << std::showpos << r.relative_gap * 100.0 << std::noshowpos << "% (tolerance "
       << r.tolerance * 100.0 << "%): " << (r.within_tolerance ? "within" : "OUTSIDE") << "\n";
  }
  return os.str();
}

std::string stage_table(const ModelConfig& config) {
  std::ostringstream os;
  os << "  stage  extent   dim  heads  patch  ratio  blocks\n";
  const auto extents = config.stage_extents();
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const StageSpec& s = config.stages[i];
    const std::string extent = std::to_string(extents[i].first) + "x" + std::to_string(extents[i].second);
    os << "  " << std::setw(5) << i + 1 << std::setw(8) << extent << std::setw(6) << s.dim << std::setw(7) << s.heads
       << std::setw(7) << s.patch << std::setw(7) << s.ratio << std::setw(8) << s.blocks << "\n";
  }
  return os.str();
}

template ParamReconciliation reconcile_params(Model<float>&, double);
template ParamReconciliation reconcile_params(Model<double>&, double);

template class ResformerBlock<float>;
template class ResformerBlock<double>;
template class Downsample<float>;
template class Downsample<double>;
template class Model<float>;
template class Model<double>;
template void copy_state(StateRefs<float>&, StateRefs<float>&);
template void copy_state(StateRefs<float>&, StateRefs<double>&);
template void copy_state(StateRefs<double>&, StateRefs<float>&);
template void copy_state(StateRefs<double>&, StateRefs<double>&);

}  // namespace resformer
