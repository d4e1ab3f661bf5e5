// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "resformer/autograd.hpp"
#include "resformer/layers.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace resformer {

/// Sampling is split into fixed-size chunks, each with its own seeded stream,
/// and merged in chunk order, so results do not depend on `jobs`.
struct MCOptions {
  std::uint64_t seed = 0;
  Index jobs = 1;
  Index chunk_draws = 1024;
};

struct MCReport {
  std::string name;
  // Case parameters in a fixed order, e.g. {"f_x", 0.3}, {"m", 64}.
  std::vector<std::pair<std::string, double>> params;
  Index samples = 0;
  double mean = 0;
  double stderr_mean = 0;
  double variance = 0;
  double predicted_mean = 0;
  double predicted_variance = 0;
  // Variance passes inside [variance_low, variance_high].
  double variance_low = 0;
  double variance_high = 0;
  bool mean_pass = false;
  bool variance_pass = false;

  bool pass() const { return mean_pass && variance_pass; }
};

/// Mean within 3 standard errors; variance within `rel_tol` of the prediction.
void judge_relative(MCReport& report, double rel_tol = 0.05);
/// Mean within 3 standard errors; variance inside [low, high].
void judge_interval(MCReport& report, double low, double high);

enum class ProductForm { dst, dst_t };

/// Currents I = sum_k x_k z_k with x_k ~ Bernoulli(f_x) and z_k ~ N(0, 1),
/// evaluated as X f(Y) (dst) or X f(Y)^T (dst_t) against q output columns.
/// Predicted: mean 0, variance f_x * m. Throws ContractViolation unless
/// 0 < f_x < 1.
MCReport theorem1_mc(double f_x, Index m, Index q, Index samples, ProductForm form, const MCOptions& options);

/// The same currents multiplied by c1 = 1 / sqrt(f_x * m); variance in [0.9, 1.1].
MCReport post_scale_variance(double f_x, Index m, Index samples, ProductForm form, const MCOptions& options);

/// Output currents of the second product, sum over HW / p^2 attention-map
/// entries ~ Bernoulli(f_attn) times N(0, 1), multiplied by c2.
MCReport c2_scale_variance(double f_attn, Index tokens, Index patch, Index samples, const MCOptions& options);

/// Column sums of Q (.) K with Q, K ~ Bernoulli over HW rows. Predicted
/// variance HW f_Q f_K (1 - f_Q f_K); with `scaled`, multiplied by
/// sdsa_scale and judged against [0.9, 1.1].
MCReport sdsa_scale_mc(double f_q, double f_k, Index tokens, Index samples, bool scaled, const MCOptions& options);

struct ConvEquivReport {
  std::string name;
  Shape input;   // [H, W, C_in]
  Shape kernel;  // [h, w, C_out, C_in]
  Index stride = 1;
  double max_deviation = 0;
  bool pass = false;
};

/// Checks conv(Y, W) == g_Y(Y) g_W(W) for a stride-p, unpadded convolution.
/// input [H, W, C_in], kernel [h, w, C_out, C_in].
ConvEquivReport conv_equiv(const Tensor<double>& input, const Tensor<double>& kernel, Index stride,
                           Index padding = 0);

/// g_Y: [H, W, C_in] -> [H_out * W_out, h * w * C_in]
RowMatrix<double> unfold_patches(const Tensor<double>& input, Index kh, Index kw, Index stride);
/// g_W: [h, w, C_out, C_in] -> [h * w * C_in, C_out]
RowMatrix<double> unfold_kernel(const Tensor<double>& kernel);

struct ConvCase {
  std::string name;
  Index height = 0, width = 0, in_channels = 0, out_channels = 0, kernel = 1, stride = 1;
};

/// Every stride-p, padding-0 convolution in the registered architectures
/// (deduplicated), followed by the 4x4 / 2x2 / stride-2 reference case.
std::vector<ConvCase> registry_conv_cases();
ConvEquivReport run_conv_case(const ConvCase& c, std::uint64_t seed);

struct GradcheckEntry {
  std::string parameter;
  Index index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  bool pass = false;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  Index coords = 100;
  double step = 1e-5;
  double tolerance = 1e-3;
  // Denominator floor of the relative error.
  double floor = 1e-6;
};

struct GradcheckReport {
  std::string name;
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0;
  bool pass = false;
};

/// Central differences against reverse-mode gradients on coordinates sampled
/// uniformly over all parameter scalars.
GradcheckReport gradcheck(const std::string& name, const std::vector<Parameter<double>*>& parameters,
                          const std::function<Var<double>()>& loss, const GradcheckOptions& options);

/// One block of the Nano second stage (64 channels, 2 heads, p = 2) at 16x16.
GradcheckReport gradcheck_nano_block(const GradcheckOptions& options);
/// Whole Nano model with a cross-entropy loss.
GradcheckReport gradcheck_nano_model(const GradcheckOptions& options);

/// Settings shared by every gradient check: smoothed neurons with the
/// sigmoid-derivative surrogate, training-mode batch norm, frozen rates.
RunContext<double> gradcheck_context(Index time_steps);

/// Named groups of checks run by the command-line `verify` command.
struct SuiteOptions {
  std::uint64_t seed = 0;
  Index jobs = 1;
  Index samples = 100000;
  // theorem1 only: restrict to one rate / width instead of the default grid.
  std::optional<double> f_x;
  std::optional<Index> m;
  Index gradcheck_coords = 100;
};

struct SuiteResult {
  std::string suite;
  std::string jsonl;                // machine-readable records, one per line
  std::vector<std::string> summary; // human-readable lines
  Index checks = 0;
  Index failures = 0;

  bool pass() const { return checks > 0 && failures == 0; }
};

/// theorem1, scaling, sdsa, conv-equiv, gradcheck.
std::vector<std::string> suite_names();
/// Throws ConfigError for an unknown suite.
SuiteResult run_suite(const std::string& suite, const SuiteOptions& options);

std::string to_jsonl(const MCReport& report);
std::string to_jsonl(const ConvEquivReport& report);
std::string to_jsonl(const GradcheckReport& report);

}  // namespace resformer
