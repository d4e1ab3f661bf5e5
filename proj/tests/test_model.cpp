// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/checkpoint.hpp"
#include "resformer/model.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace resformer;

namespace {

// Closed-form parameter count of a config, written out term by term.
Index hand_count(const ModelConfig& c) {
  Index n = c.in_channels * c.stages[0].dim * c.stem.kernel * c.stem.kernel + 2 * c.stages[0].dim;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const StageSpec& s = c.stages[i];
    const Index d = s.dim, hidden = s.dim * s.ratio;
    if (i > 0) n += c.stages[i - 1].dim * d * 9 + 2 * d;
    const Index attn = d * 2 * d * s.patch * s.patch + 2 * 2 * d + d * d + 2 * d;
    const Index ffn = d * hidden + 2 * hidden + (hidden / s.group_width) * s.group_width * s.group_width * 9 +
                      2 * hidden + hidden * d + 2 * d;
    n += s.blocks * (attn + ffn);
  }
  return n + c.stages.back().dim * c.num_classes + c.num_classes;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("resformer_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
T read_at(const std::string& s, std::size_t& pos) {
  T v;
  std::memcpy(&v, s.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

Tensor<float> nano_images(Index batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testing_util::normal<float>({batch, 3, 32, 32}, rng);
}

}  // namespace

TEST(ModelConfig, TiStageExtents) {
  const auto e = registry_config("Ti").stage_extents();
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].first, 56);
  EXPECT_EQ(e[1].first, 28);
  EXPECT_EQ(e[2].first, 14);
}

TEST(ModelConfig, LargeThirdStage) {
  const StageSpec s = registry_config("L").stages[2];
  EXPECT_EQ(s.dim, 1024);
  EXPECT_EQ(s.heads, 16);
  EXPECT_EQ(s.patch, 1);
  EXPECT_EQ(s.blocks, 3);
}

TEST(ModelConfig, UnknownArchitectureRejected) { EXPECT_THROW(registry_config("XL"), ConfigError); }

TEST(ModelConfig, EchoRoundTripsThroughParser) {
  for (const std::string& arch : registry_names()) {
    const ModelConfig c = registry_config(arch);
    std::istringstream in(c.echo());
    const ModelConfig back = parse_config(in);
    EXPECT_EQ(back.echo(), c.echo());
    EXPECT_EQ(back.digest(), c.digest());
  }
}

TEST(ModelConfig, OverridesApplyOnTopOfArch) {
  std::istringstream in("arch = Nano\n# comment\ntime_steps = 2   # trailing\nstage2.blocks = 3\n");
  const ModelConfig c = parse_config(in);
  EXPECT_EQ(c.time_steps, 2);
  EXPECT_EQ(c.stages[1].blocks, 3);
  EXPECT_NE(c.digest(), registry_config("Nano").digest());
}

TEST(ModelConfig, UnknownKeyIsAnErrorWithLocation) {
  std::istringstream in("arch = Nano\ntime_step = 2\n");
  try {
    parse_config(in, "cfg.txt");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.txt:2"), std::string::npos) << e.what();
  }
}

TEST(ModelConfig, ArchMustComeFirst) {
  std::istringstream in("time_steps = 2\narch = Nano\n");
  EXPECT_THROW(parse_config(in), ConfigError);
}

TEST(ModelConfig, InvalidValuesRejected) {
  for (const char* text : {"arch = Nano\ntime_steps = 0\n", "arch = Nano\nstage1.heads = 3\n",
                           "arch = Nano\nstage1.patch = 3\n", "arch = Nano\ntime_steps = two\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_config(in), ConfigError) << text;
  }
}

TEST(Model, NanoBuildsWithHandCountedParameters) {
  Model<float> m(registry_config("Nano"), 0);
  EXPECT_EQ(m.param_count(), hand_count(m.config()));
  Index sum = 0;
  for (const ParamGroup& g : m.param_breakdown()) sum += g.count;
  EXPECT_EQ(sum, m.param_count());
}

TEST(Model, RegistryCountsMatchClosedForm) {
  for (const char* arch : {"Ti", "S"}) {
    Model<float> m(registry_config(arch), 0);
    EXPECT_EQ(m.param_count(), hand_count(m.config())) << arch;
  }
}

TEST(Model, ReconciliationAgainstPublishedCounts) {
  for (const char* arch : {"Ti", "S", "M", "L"}) {
    const ModelConfig c = registry_config(arch);
    const double published = *published_param_millions(arch) * 1e6;
    EXPECT_NEAR(static_cast<double>(hand_count(c)), published, 0.02 * published) << arch;
  }
  Model<float> ti(registry_config("Ti"), 0);
  const ParamReconciliation r = reconcile_params(ti);
  EXPECT_TRUE(r.within_tolerance);
  EXPECT_EQ(r.conv_weights + r.batchnorm_affine + r.classifier, r.counted);
  // Ti ends with 384 channels.
  EXPECT_EQ(r.classifier, 384 * 1000 + 1000);
}

TEST(Model, DownsampleHalvesExtent) {
  std::mt19937_64 rng(1);
  Downsample<float> down("down", 64, 192, rng);
  RunContext<float> ctx;
  ctx.time_steps = 1;
  NoGradGuard no_grad;
  const Var<float> y = down.forward(Var<float>(testing_util::normal<float>({1, 64, 56, 56}, rng, 2.0)), ctx);
  EXPECT_EQ(y.shape(), (Shape{1, 192, 28, 28}));
}

TEST(Model, NoDownsampleAfterLastStage) {
  Model<float> m(registry_config("Ti"), 0);
  EXPECT_EQ(m.downsamples.size(), m.stages.size() - 1);
}

TEST(Model, LogitsShape) {
  Model<float> m(registry_config("Nano"), 0);
  NoGradGuard no_grad;
  EXPECT_EQ(m.forward(nano_images(3, 1), m.context(false)).shape(), (Shape{3, 10}));
}

TEST(Model, SingleTimeStepRuns) {
  ModelConfig c = registry_config("Nano");
  c.time_steps = 1;
  Model<float> m(c, 0);
  NoGradGuard no_grad;
  const Var<float> y = m.forward(nano_images(2, 2), m.context(false));
  EXPECT_EQ(y.shape(), (Shape{2, 10}));
  EXPECT_TRUE(y.value().all_finite());
}

TEST(Model, PermutingBatchPermutesLogits) {
  Model<double> m(registry_config("Nano"), 3);
  NoGradGuard no_grad;
  std::mt19937_64 rng(4);
  const Tensor<double> x = testing_util::normal({3, 3, 32, 32}, rng, 2.0);
  // Fix the firing-rate EMAs so both passes use identical scaling factors.
  m.forward(x, m.context(true));
  Tensor<double> swapped(x.shape());
  const Index per = 3 * 32 * 32;
  const Index order[3] = {2, 0, 1};
  for (Index b = 0; b < 3; ++b)
    for (Index i = 0; i < per; ++i) swapped[b * per + i] = x[order[b] * per + i];
  const Tensor<double> a = m.forward(x, m.context(false)).value();
  const Tensor<double> c = m.forward(swapped, m.context(false)).value();
  for (Index b = 0; b < 3; ++b)
    for (Index k = 0; k < 10; ++k) EXPECT_NEAR(c[b * 10 + k], a[order[b] * 10 + k], 1e-12);
}

TEST(Model, SameSeedSameWeights) {
  Model<float> a(registry_config("Nano"), 9), b(registry_config("Nano"), 9), c(registry_config("Nano"), 10);
  const auto pa = a.state().parameters, pb = b.state().parameters, pc = c.state().parameters;
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(testing_util::max_abs_diff(pa[i]->value(), pb[i]->value()), 0.0);
    differs = differs || testing_util::max_abs_diff(pa[i]->value(), pc[i]->value()) > 0;
  }
  EXPECT_TRUE(differs);
}

TEST(Checkpoint, RoundTripReproducesOutputsExactly) {
  Model<float> a(registry_config("Nano"), 5);
  const Tensor<float> x = nano_images(2, 6);
  {
    NoGradGuard no_grad;
    a.forward(x, a.context(true));  // moves BN statistics and EMAs off their defaults
  }
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(a, path.string());
  Model<float> b(registry_config("Nano"), 99);
  load_checkpoint(b, path.string());
  NoGradGuard no_grad;
  const Tensor<float> ya = a.forward(x, a.context(false)).value();
  const Tensor<float> yb = b.forward(x, b.context(false)).value();
  EXPECT_EQ(testing_util::max_abs_diff(ya, yb), 0.0);
  EXPECT_EQ(read_checkpoint_config(path.string()).digest(), a.config().digest());
  std::filesystem::remove(path);
}

TEST(Checkpoint, ConfigMismatchRejected) {
  Model<float> a(registry_config("Nano"), 0);
  const auto path = temp_file("mismatch.ckpt");
  save_checkpoint(a, path.string());
  ModelConfig other = registry_config("Nano");
  other.time_steps = 2;
  Model<float> b(other, 0);
  EXPECT_THROW(load_checkpoint(b, path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionDetected) {
  Model<float> a(registry_config("Nano"), 0);
  const auto path = temp_file("corrupt.ckpt");
  save_checkpoint(a, path.string());
  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x20;
  std::ofstream(path, std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(a, path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFiringRateTableRejected) {
  // Rewrites a valid checkpoint as an older writer would have produced it:
  // identical tensors, an empty firing-rate table, and a fresh checksum.
  Model<float> a(registry_config("Nano"), 0);
  const auto path = temp_file("noema.ckpt");
  save_checkpoint(a, path.string());
  const std::string bytes = slurp(path);
  std::size_t pos = 4 + 4 + 8;
  pos += read_at<std::uint64_t>(bytes, pos);
  const auto tensors = read_at<std::uint64_t>(bytes, pos);
  for (std::uint64_t i = 0; i < tensors; ++i) {
    pos += read_at<std::uint32_t>(bytes, pos);
    const auto dtype = read_at<std::uint8_t>(bytes, pos);
    const auto rank = read_at<std::uint32_t>(bytes, pos);
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) n *= read_at<std::uint64_t>(bytes, pos);
    pos += n * (dtype == 0 ? 4 : 8);
  }
  std::string old = bytes.substr(0, pos);
  const std::uint64_t zero = 0;
  old.append(reinterpret_cast<const char*>(&zero), 8);
  const std::uint64_t sum = fnv1a(old);
  old.append(reinterpret_cast<const char*>(&sum), 8);
  std::ofstream(path, std::ios::binary) << old;
  try {
    load_checkpoint(a, path.string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("firing-rate"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, LoadsIntoDoublePrecisionModel) {
  Model<float> a(registry_config("Nano"), 7);
  const auto path = temp_file("precision.ckpt");
  save_checkpoint(a, path.string());
  Model<double> b(registry_config("Nano"), 0);
  load_checkpoint(b, path.string());
  const auto pa = a.state().parameters;
  const auto pb = b.state().parameters;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(testing_util::max_abs_diff(pa[i]->value().cast<double>(), pb[i]->value()), 0.0);
  }
  std::filesystem::remove(path);
}
