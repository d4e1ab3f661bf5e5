// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/verification.hpp"

#include "resformer/attention.hpp"
#include "resformer/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cmath>
#include <limits>
#include <set>
#include <thread>
#include <tuple>

namespace resformer {

namespace {

// Running mean / sum of squared deviations, mergeable in a fixed order.
struct Moments {
  double n = 0, mean = 0, m2 = 0;

  void add(double x) {
    n += 1;
    const double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0) return;
    const double total = n + o.n;
    const double delta = o.mean - mean;
    mean += delta * o.n / total;
    m2 += o.m2 + delta * delta * n * o.n / total;
    n = total;
  }
};

std::mt19937_64 chunk_stream(std::uint64_t seed, Index chunk) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chunk)};
  return std::mt19937_64(seq);
}

// `draw(rng, moments)` adds the samples of one draw.
template <typename Draw>
Moments run_chunks(Index draws, const MCOptions& options, const Draw& draw) {
  const Index per_chunk = std::max<Index>(1, options.chunk_draws);
  const Index chunks = (draws + per_chunk - 1) / per_chunk;
  std::vector<Moments> parts(static_cast<std::size_t>(chunks));
  std::atomic<Index> next{0};
  auto worker = [&]() {
    for (Index c = next++; c < chunks; c = next++) {
      std::mt19937_64 rng = chunk_stream(options.seed, c);
      const Index count = std::min(per_chunk, draws - c * per_chunk);
      for (Index d = 0; d < count; ++d) draw(rng, parts[static_cast<std::size_t>(c)]);
    }
  };
  const Index jobs = std::clamp<Index>(options.jobs, 1, std::max<Index>(1, chunks));
  std::vector<std::thread> threads;
  for (Index j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  Moments total;
  for (const Moments& m : parts) total.merge(m);
  return total;
}

void require_rate(double f, const char* what) {
  if (!(f > 0.0 && f < 1.0)) {
    throw ContractViolation(std::string(what) + " must lie strictly between 0 and 1, got " + std::to_string(f));
  }
}

MCReport make_report(std::string name, const Moments& m) {
  MCReport r;
  r.name = std::move(name);
  r.samples = static_cast<Index>(m.n);
  r.mean = m.mean;
  r.variance = m.n > 1 ? m.m2 / (m.n - 1) : 0.0;
  r.stderr_mean = std::sqrt(r.variance / std::max(1.0, m.n));
  return r;
}

Eigen::RowVectorXd bernoulli_row(std::mt19937_64& rng, Index n, double p) {
  std::bernoulli_distribution b(p);
  Eigen::RowVectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = b(rng) ? 1.0 : 0.0;
  return v;
}

Eigen::MatrixXd normal_matrix(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd z(rows, cols);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  return z;
}

// Samples of x f(Y) (or x f(Y)^T): one Bernoulli row against q standard
// normal columns per draw, so samples within a draw are uncorrelated.
Moments product_moments(double f_x, Index m, Index q, Index samples, ProductForm form, double scale,
                        const MCOptions& options) {
  const Index draws = (samples + q - 1) / q;
  return run_chunks(draws, options, [=](std::mt19937_64& rng, Moments& acc) {
    const Eigen::RowVectorXd x = bernoulli_row(rng, m, f_x);
    Eigen::RowVectorXd current;
    if (form == ProductForm::dst) {
      current = x * normal_matrix(rng, m, q);
    } else {
      current = x * normal_matrix(rng, q, m).transpose();
    }
    for (Index j = 0; j < q; ++j) acc.add(scale * current[j]);
  });
}

std::string form_name(ProductForm form) { return form == ProductForm::dst ? "dst" : "dst_t"; }

std::string fmt_double(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), " %s=%g", key.c_str(), value);
  return buf;
}

}  // namespace

void judge_relative(MCReport& report, double rel_tol) {
  judge_interval(report, report.predicted_variance * (1.0 - rel_tol), report.predicted_variance * (1.0 + rel_tol));
}

void judge_interval(MCReport& report, double low, double high) {
  report.variance_low = low;
  report.variance_high = high;
  report.mean_pass = std::abs(report.mean - report.predicted_mean) <= 3.0 * report.stderr_mean;
  report.variance_pass = report.variance >= low && report.variance <= high;
}

MCReport theorem1_mc(double f_x, Index m, Index q, Index samples, ProductForm form, const MCOptions& options) {
  require_rate(f_x, "f_x");
  if (m < 1 || q < 1 || samples < 1) throw ContractViolation("theorem1_mc: m, q and samples must be positive");
  MCReport r = make_report("theorem1." + form_name(form), product_moments(f_x, m, q, samples, form, 1.0, options));
  r.params = {{"f_x", f_x}, {"m", static_cast<double>(m)}, {"q", static_cast<double>(q)}};
  r.predicted_variance = f_x * static_cast<double>(m);
  judge_relative(r);
  return r;
}

MCReport post_scale_variance(double f_x, Index m, Index samples, ProductForm form, const MCOptions& options) {
  require_rate(f_x, "f_x");
  const double c1 = scale_c1(f_x, m);
  MCReport r = make_report("scaling.c1." + form_name(form), product_moments(f_x, m, m, samples, form, c1, options));
  r.params = {{"f_x", f_x}, {"m", static_cast<double>(m)}, {"c1", c1}};
  r.predicted_variance = 1.0;
  judge_interval(r, 0.9, 1.1);
  return r;
}

MCReport c2_scale_variance(double f_attn, Index tokens, Index patch, Index samples, const MCOptions& options) {
  require_rate(f_attn, "f_attn");
  if (patch < 1 || tokens % (patch * patch) != 0) {
    throw ContractViolation("c2_scale_variance: tokens must be divisible by patch^2");
  }
  const Index reduced = tokens / (patch * patch);
  const double c2 = scale_c2(f_attn, tokens, patch);
  MCReport r = make_report("scaling.c2",
                           product_moments(f_attn, reduced, 64, samples, ProductForm::dst, c2, options));
  r.params = {{"f_attn", f_attn}, {"tokens", static_cast<double>(tokens)}, {"patch", static_cast<double>(patch)},
              {"c2", c2}};
  r.predicted_variance = 1.0;
  judge_interval(r, 0.9, 1.1);
  return r;
}

MCReport sdsa_scale_mc(double f_q, double f_k, Index tokens, Index samples, bool scaled, const MCOptions& options) {
  require_rate(f_q, "f_Q");
  require_rate(f_k, "f_K");
  if (tokens < 1 || samples < 1) throw ContractViolation("sdsa_scale_mc: tokens and samples must be positive");
  constexpr Index kColumns = 64;
  const double scale = scaled ? sdsa_scale(f_q, f_k, tokens) : 1.0;
  const Index draws = (samples + kColumns - 1) / kColumns;
  const Moments m = run_chunks(draws, options, [=](std::mt19937_64& rng, Moments& acc) {
    std::bernoulli_distribution bq(f_q), bk(f_k);
    for (Index j = 0; j < kColumns; ++j) {
      Index sum = 0;
      for (Index i = 0; i < tokens; ++i) {
        const bool q = bq(rng);
        const bool k = bk(rng);
        sum += (q && k) ? 1 : 0;
      }
      acc.add(scale * static_cast<double>(sum));
    }
  });
  const double joint = f_q * f_k;
  MCReport r = make_report(scaled ? "sdsa.scaled" : "sdsa.variance", m);
  r.params = {{"f_q", f_q}, {"f_k", f_k}, {"tokens", static_cast<double>(tokens)}, {"scale", scale}};
  r.predicted_mean = scale * static_cast<double>(tokens) * joint;
  r.predicted_variance = scale * scale * static_cast<double>(tokens) * joint * (1.0 - joint);
  if (scaled) {
    judge_interval(r, 0.9, 1.1);
  } else {
    judge_relative(r);
  }
  return r;
}

RowMatrix<double> unfold_patches(const Tensor<double>& input, Index kh, Index kw, Index stride) {
  if (input.rank() != 3) throw DimensionError("unfold_patches expects [H, W, C_in]");
  const Index h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const Index oh = conv_output_extent(h, kh, stride, 0), ow = conv_output_extent(w, kw, stride, 0);
  RowMatrix<double> out(oh * ow, kh * kw * c);
  for (Index i = 0; i < oh; ++i) {
    for (Index j = 0; j < ow; ++j) {
      for (Index ch = 0; ch < c; ++ch) {
        for (Index k = 0; k < kh; ++k) {
          for (Index l = 0; l < kw; ++l) {
            out(i * ow + j, ch * kh * kw + k * kw + l) = input.at({i * stride + k, j * stride + l, ch});
          }
        }
      }
    }
  }
  return out;
}

RowMatrix<double> unfold_kernel(const Tensor<double>& kernel) {
  if (kernel.rank() != 4) throw DimensionError("unfold_kernel expects [h, w, C_out, C_in]");
  const Index kh = kernel.dim(0), kw = kernel.dim(1), co = kernel.dim(2), ci = kernel.dim(3);
  RowMatrix<double> out(kh * kw * ci, co);
  for (Index c = 0; c < ci; ++c) {
    for (Index k = 0; k < kh; ++k) {
      for (Index l = 0; l < kw; ++l) {
        for (Index o = 0; o < co; ++o) out(c * kh * kw + k * kw + l, o) = kernel.at({k, l, o, c});
      }
    }
  }
  return out;
}

ConvEquivReport conv_equiv(const Tensor<double>& input, const Tensor<double>& kernel, Index stride, Index padding) {
  if (padding != 0) throw ContractViolation("conv_equiv: only unpadded convolutions have the linear form");
  if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(3) != input.dim(2)) {
    throw DimensionError("conv_equiv: input [H,W,C_in] " + to_string(input.shape()) + " and kernel [h,w,C_out,C_in] " +
                         to_string(kernel.shape()) + " disagree");
  }
  const Index h = input.dim(0), w = input.dim(1), ci = input.dim(2);
  const Index kh = kernel.dim(0), kw = kernel.dim(1), co = kernel.dim(2);
  const RowMatrix<double> linear = unfold_patches(input, kh, kw, stride) * unfold_kernel(kernel);

  // Same data through the NCHW convolution.
  Tensor<double> nchw({1, ci, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < ci; ++c) nchw.at({0, c, y, x}) = input.at({y, x, c});
  Tensor<double> k_nchw({co, ci, kh, kw});
  for (Index o = 0; o < co; ++o)
    for (Index c = 0; c < ci; ++c)
      for (Index k = 0; k < kh; ++k)
        for (Index l = 0; l < kw; ++l) k_nchw.at({o, c, k, l}) = kernel.at({k, l, o, c});
  const Tensor<double> conv = conv2d(nchw, k_nchw, {stride, 0, 1});
  const Index oh = conv.dim(2), ow = conv.dim(3);

  ConvEquivReport r;
  r.input = input.shape();
  r.kernel = kernel.shape();
  r.stride = stride;
  for (Index i = 0; i < oh; ++i)
    for (Index j = 0; j < ow; ++j)
      for (Index o = 0; o < co; ++o) {
        r.max_deviation = std::max(r.max_deviation, std::abs(linear(i * ow + j, o) - conv.at({0, o, i, j})));
      }
  r.pass = r.max_deviation <= 1e-6;
  return r;
}

std::vector<ConvCase> registry_conv_cases() {
  std::vector<ConvCase> cases;
  std::set<std::tuple<Index, Index, Index, Index, Index>> seen;
  auto add = [&](const std::string& name, Index hw, Index ci, Index co, Index k) {
    if (seen.emplace(hw, ci, co, k, k).second) cases.push_back({name, hw, hw, ci, co, k, k});
  };
  for (const std::string& arch : registry_names()) {
    const ModelConfig cfg = registry_config(arch);
    const auto extents = cfg.stage_extents();
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      const StageSpec& s = cfg.stages[i];
      const Index hw = extents[i].first;
      const std::string prefix = arch + ".stage" + std::to_string(i + 1);
      add(prefix + ".conv_p", hw, s.dim, 2 * s.dim, s.patch);
      add(prefix + ".proj", hw, s.dim, s.dim, 1);
      add(prefix + ".ffl1", hw, s.dim, s.dim * s.ratio, 1);
      add(prefix + ".ffl2", hw, s.dim * s.ratio, s.dim, 1);
    }
  }
  cases.push_back({"reference.4x4_k2_s2", 4, 4, 1, 1, 2, 2});
  return cases;
}

ConvEquivReport run_conv_case(const ConvCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Tensor<double> input({c.height, c.width, c.in_channels});
  for (Index i = 0; i < input.size(); ++i) input[i] = nd(rng);
  Tensor<double> kernel({c.kernel, c.kernel, c.out_channels, c.in_channels});
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.in_channels * c.kernel * c.kernel));
  for (Index i = 0; i < kernel.size(); ++i) kernel[i] = scale * nd(rng);
  ConvEquivReport r = conv_equiv(input, kernel, c.stride);
  r.name = c.name;
  return r;
}

RunContext<double> gradcheck_context(Index time_steps) {
  RunContext<double> ctx;
  ctx.time_steps = time_steps;
  ctx.surrogate = {SurrogateKind::sigmoid_derivative, 1.0};
  ctx.neuron_mode = NeuronMode::smoothed;
  ctx.training = true;
  ctx.track_rates = false;
  return ctx;
}

GradcheckReport gradcheck(const std::string& name, const std::vector<Parameter<double>*>& parameters,
                          const std::function<Var<double>()>& loss, const GradcheckOptions& options) {
  std::vector<Index> offsets;
  Index total = 0;
  for (Parameter<double>* p : parameters) {
    offsets.push_back(total);
    total += p->value().size();
  }
  if (total == 0) throw ContractViolation("gradcheck: no parameters");

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<Index> pick(0, total - 1);
  std::set<Index> chosen;
  const Index wanted = std::min(options.coords, total);
  while (static_cast<Index>(chosen.size()) < wanted) chosen.insert(pick(rng));

  for (Parameter<double>* p : parameters) p->zero_grad();
  backward(loss());

  GradcheckReport report;
  report.name = name;
  report.pass = true;
  for (Index flat : chosen) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    Parameter<double>& p = *parameters[static_cast<std::size_t>(it - offsets.begin())];
    const Index index = flat - *it;
    GradcheckEntry e{p.name(), index, p.grad()[index]};
    const double saved = p.value()[index];
    double plus, minus;
    {
      NoGradGuard no_grad;
      p.value()[index] = saved + options.step;
      plus = loss().value()[0];
      p.value()[index] = saved - options.step;
      minus = loss().value()[0];
      p.value()[index] = saved;
    }
    e.numeric = (plus - minus) / (2.0 * options.step);
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.floor});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    e.pass = std::isfinite(e.analytic) && std::isfinite(e.numeric) && e.rel_error <= options.tolerance;
    if (!std::isfinite(e.rel_error)) e.rel_error = std::numeric_limits<double>::infinity();
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.pass = report.pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  return report;
}

namespace {

Tensor<double> normal_tensor(Shape shape, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * nd(rng);
  return t;
}

}  // namespace

GradcheckReport gradcheck_nano_block(const GradcheckOptions& options) {
  constexpr Index kSteps = 2, kBatch = 2;
  const ModelConfig nano = registry_config("Nano");
  const StageSpec spec = nano.stages[1];
  const Index hw = nano.stage_extents()[1].first;
  std::mt19937_64 rng(options.seed);
  ResformerBlock<double> block("stage2.block1", spec, rng);
  const Var<double> input(normal_tensor({kSteps * kBatch, spec.dim, hw, hw}, 2.0, rng));
  const Tensor<double> probe = normal_tensor({kSteps * kBatch, spec.dim, hw, hw}, 1.0, rng);

  RunContext<double> ctx = gradcheck_context(kSteps);
  {
    // Fix the scaling factors before differentiating.
    NoGradGuard no_grad;
    RunContext<double> warm = ctx;
    warm.track_rates = true;
    block.forward(input, warm);
  }
  StateRefs<double> refs;
  block.collect(refs);
  return gradcheck("gradcheck.nano_block", refs.parameters,
                   [&] { return weighted_sum(block.forward(input, ctx), probe); }, options);
}

GradcheckReport gradcheck_nano_model(const GradcheckOptions& options) {
  constexpr Index kBatch = 2;
  ModelConfig cfg = registry_config("Nano");
  cfg.time_steps = 2;
  Model<double> model(cfg, options.seed);
  std::mt19937_64 rng(options.seed + 1);
  const Tensor<double> images = normal_tensor({kBatch, cfg.in_channels, cfg.input_height, cfg.input_width}, 1.0, rng);
  const std::vector<int> labels{1, 7};

  RunContext<double> ctx = gradcheck_context(cfg.time_steps);
  {
    NoGradGuard no_grad;
    RunContext<double> warm = ctx;
    warm.track_rates = true;
    model.forward(images, warm);
  }
  return gradcheck("gradcheck.nano_model", model.state().parameters,
                   [&] { return cross_entropy(model.forward(images, ctx), labels); }, options);
}

namespace {

std::string describe(const MCReport& r) {
  std::string out = r.name;
  for (const auto& [key, value] : r.params) out += fmt_double(key, value);
  return out;
}

}  // namespace

std::vector<std::string> suite_names() { return {"theorem1", "scaling", "sdsa", "conv-equiv", "gradcheck"}; }

SuiteResult run_suite(const std::string& suite, const SuiteOptions& options) {
  SuiteResult result;
  result.suite = suite;
  const MCOptions mc{options.seed, options.jobs};
  auto add_mc = [&result](const MCReport& r) {
    result.jsonl += to_jsonl(r);
    ++result.checks;
    if (!r.pass()) ++result.failures;
    result.summary.push_back(std::string(r.pass() ? "pass " : "FAIL ") + describe(r) + " variance " +
                             std::to_string(r.variance) + " predicted " + std::to_string(r.predicted_variance));
  };
  if (suite == "theorem1") {
    std::vector<double> rates{0.1, 0.3, 0.5};
    std::vector<Index> widths{64, 256};
    if (options.f_x) rates = {*options.f_x};
    if (options.m) widths = {*options.m};
    for (double f : rates) {
      for (Index m : widths) {
        for (ProductForm form : {ProductForm::dst, ProductForm::dst_t}) {
          add_mc(theorem1_mc(f, m, m, options.samples, form, mc));
        }
      }
    }
  } else if (suite == "scaling") {
    for (double f : {0.1, 0.3, 0.5}) {
      for (Index m : {64, 256}) add_mc(post_scale_variance(f, m, options.samples, ProductForm::dst_t, mc));
    }
    // Attention-map rates over the token grids and patch sizes of Nano and Ti.
    add_mc(c2_scale_variance(0.1, 32 * 32, 4, options.samples, mc));
    add_mc(c2_scale_variance(0.3, 16 * 16, 2, options.samples, mc));
    add_mc(c2_scale_variance(0.5, 56 * 56, 4, options.samples, mc));
    add_mc(c2_scale_variance(0.2, 14 * 14, 1, options.samples, mc));
  } else if (suite == "sdsa") {
    for (const auto& [fq, fk] : {std::pair{0.5, 0.5}, std::pair{0.2, 0.4}, std::pair{0.1, 0.9}}) {
      for (Index tokens : {64, 196}) {
        add_mc(sdsa_scale_mc(fq, fk, tokens, options.samples, false, mc));
        add_mc(sdsa_scale_mc(fq, fk, tokens, options.samples, true, mc));
      }
    }
  } else if (suite == "conv-equiv") {
    for (const ConvCase& c : registry_conv_cases()) {
      const ConvEquivReport r = run_conv_case(c, options.seed);
      result.jsonl += to_jsonl(r);
      ++result.checks;
      if (!r.pass) ++result.failures;
      result.summary.push_back(std::string(r.pass ? "pass " : "FAIL ") + r.name + " max deviation " +
                               std::to_string(r.max_deviation));
    }
  } else if (suite == "gradcheck") {
    GradcheckOptions g;
    g.seed = options.seed;
    g.coords = options.gradcheck_coords;
    const GradcheckReport r = gradcheck_nano_block(g);
    result.jsonl += to_jsonl(r);
    ++result.checks;
    if (!r.pass) ++result.failures;
    result.summary.push_back(std::string(r.pass ? "pass " : "FAIL ") + r.name + " coords " +
                             std::to_string(r.entries.size()) + " max rel error " + std::to_string(r.max_rel_error));
  } else {
    throw ConfigError("unknown verify suite '" + suite + "'");
  }
  return result;
}

std::string to_jsonl(const MCReport& r) {
  nlohmann::ordered_json j;
  j["record"] = "monte_carlo";
  j["name"] = r.name;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [key, value] : r.params) params[key] = value;
  j["params"] = params;
  j["samples"] = r.samples;
  j["mean"] = r.mean;
  j["stderr"] = r.stderr_mean;
  j["predicted_mean"] = r.predicted_mean;
  j["variance"] = r.variance;
  j["predicted_variance"] = r.predicted_variance;
  j["variance_interval"] = {r.variance_low, r.variance_high};
  j["mean_pass"] = r.mean_pass;
  j["variance_pass"] = r.variance_pass;
  j["pass"] = r.pass();
  return j.dump() + "\n";
}

std::string to_jsonl(const ConvEquivReport& r) {
  nlohmann::ordered_json j;
  j["record"] = "conv_equiv";
  j["name"] = r.name;
  j["input"] = r.input;
  j["kernel"] = r.kernel;
  j["stride"] = r.stride;
  j["max_deviation"] = r.max_deviation;
  j["pass"] = r.pass;
  return j.dump() + "\n";
}

std::string to_jsonl(const GradcheckReport& r) {
  std::string out;
  for (const GradcheckEntry& e : r.entries) {
    nlohmann::ordered_json j;
    j["record"] = "gradcheck_coord";
    j["check"] = r.name;
    j["parameter"] = e.parameter;
    j["index"] = e.index;
    j["analytic"] = e.analytic;
    j["numeric"] = e.numeric;
    j["rel_error"] = e.rel_error;
    j["pass"] = e.pass;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json j;
  j["record"] = "gradcheck";
  j["name"] = r.name;
  j["coords"] = r.entries.size();
  j["max_rel_error"] = r.max_rel_error;
  j["pass"] = r.pass;
  return out + j.dump() + "\n";
}

}  // namespace resformer
