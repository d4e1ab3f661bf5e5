// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/audit.hpp"
#include "resformer/checkpoint.hpp"
#include "resformer/model.hpp"
#include "resformer/training.hpp"
#include "resformer/verification.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace resformer;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

constexpr const char* kDefaultDataset = "synthetic:classes=10,size=32,noise=0.3,train=20,test=10,seed=7";

struct CommonOptions {
  std::string arch;
  std::string config_path;
  std::uint64_t seed = 0;
  std::optional<Index> time_steps;
  std::string out = "resformer-out";
  Index jobs = 1;
  std::string dataset = kDefaultDataset;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--arch", o.arch, "Registered architecture (Ti, S, M, L, Nano)");
  app->add_option("--config", o.config_path, "Model config file (key = value)");
  app->add_option("--seed", o.seed, "Seed for every random choice");
  app->add_option("--time-steps", o.time_steps, "Override the number of time steps")->check(CLI::PositiveNumber);
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--jobs", o.jobs, "Worker threads for Monte Carlo and evaluation")->check(CLI::PositiveNumber);
  app->add_option("--dataset", o.dataset, "Dataset file or synthetic:SPEC");
}

ModelConfig resolve_config(const CommonOptions& o) {
  if (!o.arch.empty() && !o.config_path.empty()) {
    throw ConfigError("--arch and --config are exclusive; put `arch = ...` in the config file");
  }
  ModelConfig config = o.config_path.empty() ? registry_config(o.arch.empty() ? "Nano" : o.arch)
                                             : load_config_file(o.config_path);
  if (o.time_steps) config.time_steps = *o.time_steps;
  config.validate();
  return config;
}

fs::path output_dir(const CommonOptions& o) {
  fs::path dir(o.out);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << text;
}

std::string config_record(const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["record"] = "config";
  j["name"] = config.name;
  j["digest"] = config.digest();
  j["echo"] = config.echo();
  return j.dump() + "\n";
}

int cmd_build(const CommonOptions& o) {
  const ModelConfig config = resolve_config(o);
  Model<float> model(config, o.seed);
  const ParamReconciliation r = reconcile_params(model);
  std::printf("%s: params ≈ %.2fM (%lld)\n", config.name.c_str(), static_cast<double>(r.counted) / 1e6,
              static_cast<long long>(r.counted));
  std::printf("%s", stage_table(config).c_str());
  std::printf("%s", reconciliation_table(r).c_str());
  const fs::path dir = output_dir(o);
  write_file(dir / "build.jsonl", config_record(config) + to_jsonl(r));
  save_checkpoint(model, (dir / "model.ckpt").string());
  std::printf("wrote %s and %s\n", (dir / "build.jsonl").c_str(), (dir / "model.ckpt").c_str());
  return r.within_tolerance ? 0 : kExitCheckFailed;
}

struct TrainFlags {
  Index epochs = 50;
  Index batch_size = 64;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 0.01;
  double target_accuracy = 0;
};

int cmd_train(const CommonOptions& o, const TrainFlags& f) {
  const ModelConfig config = resolve_config(o);
  const Dataset data = open_dataset(o.dataset);
  TrainConfig tc;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch_size;
  tc.lr = f.lr;
  tc.lr_min = f.lr_min;
  tc.weight_decay = f.weight_decay;
  tc.target_train_accuracy = f.target_accuracy;
  tc.seed = o.seed;
  tc.validate();

  Model<float> model(config, o.seed);
  const fs::path dir = output_dir(o);
  std::ofstream log(dir / "train.jsonl", std::ios::binary);
  if (!log) throw FormatError((dir / "train.jsonl").string() + ": cannot open for writing");
  log << config_record(config);
  const TrainResult result = train(model, data, tc, [&](const EpochRecord& e) {
    log << to_jsonl(e) << std::flush;
    spdlog::info("epoch {} loss {:.4f} train acc {:.3f} lr {:.2e}", e.epoch, e.loss, e.train_accuracy, e.lr);
  });
  if (result.diverged) {
    spdlog::error("{}", result.message);
    save_checkpoint(model, (dir / "model.ckpt").string());
    return kExitCheckFailed;
  }
  const EvalResult train_eval = evaluate(model, data, Split::train);
  log << to_jsonl(train_eval, "train");
  bool ok = true;
  for (const EpochRecord& e : result.epochs) ok = ok && e.binary && e.rates_valid;
  std::printf("train accuracy %.4f (%lld/%lld)\n", train_eval.accuracy, static_cast<long long>(train_eval.correct),
              static_cast<long long>(train_eval.count));
  if (data.test_count() > 0) {
    const EvalResult test_eval = evaluate(model, data, Split::test);
    log << to_jsonl(test_eval, "test");
    std::printf("test accuracy %.4f (%lld/%lld), %.4g SOPs/image, %.4g mJ\n", test_eval.accuracy,
                static_cast<long long>(test_eval.correct), static_cast<long long>(test_eval.count),
                test_eval.audit.total_sops, test_eval.audit.energy_mj());
  }
  save_checkpoint(model, (dir / "model.ckpt").string());
  std::printf("wrote %s and %s\n", (dir / "train.jsonl").c_str(), (dir / "model.ckpt").c_str());
  if (!ok) spdlog::error("non-binary spikes or firing-rate EMA outside [0, 1] during training");
  return ok ? 0 : kExitCheckFailed;
}

std::string checkpoint_path(const CommonOptions& o, const std::string& explicit_path) {
  return explicit_path.empty() ? (fs::path(o.out) / "model.ckpt").string() : explicit_path;
}

int cmd_eval(const CommonOptions& o, const std::string& ckpt, const std::string& split) {
  const std::string path = checkpoint_path(o, ckpt);
  const ModelConfig config = read_checkpoint_config(path);
  Model<float> model(config, o.seed);
  load_checkpoint(model, path);
  const Dataset data = open_dataset(o.dataset);
  std::string jsonl = config_record(config);
  std::vector<std::pair<std::string, Split>> splits;
  if (split == "train" || split == "both") splits.emplace_back("train", Split::train);
  if (split == "test" || split == "both") splits.emplace_back("test", Split::test);
  for (const auto& [name, s] : splits) {
    const EvalResult r = evaluate(model, data, s);
    jsonl += to_jsonl(r, name);
    std::printf("%s accuracy %.4f (%lld/%lld), %.4g SOPs/image, %.4g mJ/image\n", name.c_str(), r.accuracy,
                static_cast<long long>(r.correct), static_cast<long long>(r.count), r.audit.total_sops,
                r.audit.energy_mj());
  }
  const fs::path dir = output_dir(o);
  write_file(dir / "eval.jsonl", jsonl);
  std::printf("wrote %s\n", (dir / "eval.jsonl").c_str());
  return 0;
}

int cmd_audit(const CommonOptions& o, const std::string& ckpt, Index images, Index calibration_passes) {
  const Dataset data = open_dataset(o.dataset);
  std::optional<ModelConfig> config;
  const bool from_checkpoint = !ckpt.empty();
  config = from_checkpoint ? read_checkpoint_config(ckpt) : resolve_config(o);
  Model<double> model(*config, o.seed);

  // Audit images come from the held-out split when there is one.
  const Index begin = data.test_count() > 0 ? data.train_count : 0;
  const Index count = std::min(images, data.size() - begin);
  std::vector<Index> idx;
  for (Index i = 0; i < count; ++i) idx.push_back(begin + i);
  const Tensor<double> batch = data.batch<double>(idx);

  if (from_checkpoint) {
    load_checkpoint(model, ckpt);
  } else {
    calibrate(model, batch, calibration_passes);
  }
  AuditRecord record;
  constexpr Index kChunk = 8;
  for (Index start = 0; start < count; start += kChunk) {
    std::vector<Index> part(idx.begin() + start, idx.begin() + std::min(count, start + kChunk));
    merge_audit(record, count_sops(model, data.batch<double>(part), true));
  }
  std::printf("%s", audit_table(record).c_str());
  const fs::path dir = output_dir(o);
  write_file(dir / "audit.jsonl", config_record(*config) + audit_jsonl(record));
  std::printf("wrote %s\n", (dir / "audit.jsonl").c_str());
  return record.spike_driven() ? 0 : kExitCheckFailed;
}

int cmd_verify(const CommonOptions& o, const std::string& suite, const SuiteOptions& base) {
  SuiteOptions opts = base;
  opts.seed = o.seed;
  opts.jobs = o.jobs;
  std::vector<std::string> suites;
  if (suite == "all") {
    suites = suite_names();
  } else {
    suites = {suite};
  }
  std::string jsonl;
  bool pass = true;
  for (const std::string& name : suites) {
    const SuiteResult r = run_suite(name, opts);
    jsonl += r.jsonl;
    for (const std::string& line : r.summary) std::printf("%s: %s\n", name.c_str(), line.c_str());
    std::printf("%s: %s (%lld checks, %lld failed)\n", name.c_str(), r.pass() ? "PASS" : "FAIL",
                static_cast<long long>(r.checks), static_cast<long long>(r.failures));
    pass = pass && r.pass();
  }
  const fs::path dir = output_dir(o);
  const fs::path file = dir / ("verify-" + suite + ".jsonl");
  write_file(file, jsonl);
  std::printf("wrote %s\n", file.c_str());
  return pass ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  spdlog::set_default_logger(spdlog::stderr_logger_mt("resformer"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Spiking transformer engine: build, train, evaluate, audit and verify"};
  app.require_subcommand(1);
  CommonOptions common;

  CLI::App* build = app.add_subcommand("build", "Construct a model, report parameters, write an untrained checkpoint");
  add_common(build, common);

  TrainFlags tf;
  CLI::App* train_cmd = app.add_subcommand("train", "Surrogate-gradient training with AdamW");
  add_common(train_cmd, common);
  train_cmd->add_option("--epochs", tf.epochs, "Epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", tf.batch_size, "Batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tf.lr, "Initial learning rate");
  train_cmd->add_option("--lr-min", tf.lr_min, "Final learning rate of the cosine schedule");
  train_cmd->add_option("--weight-decay", tf.weight_decay, "Decoupled weight decay");
  train_cmd->add_option("--target-accuracy", tf.target_accuracy,
                        "Stop after the first epoch whose running training accuracy reaches this value");

  std::string ckpt, split = "test";
  CLI::App* eval = app.add_subcommand("eval", "Accuracy and SOP report for a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", ckpt, "Checkpoint (default OUT/model.ckpt)");
  eval->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "test", "both"}));

  Index audit_images = 16, calibration = 8;
  CLI::App* audit = app.add_subcommand("audit", "SOPs, energy, firing rates and spike-driven verification");
  add_common(audit, common);
  audit->add_option("--checkpoint", ckpt, "Checkpoint to audit (default: a random model)");
  audit->add_option("--images", audit_images, "Number of images")->check(CLI::PositiveNumber);
  audit->add_option("--calibration-passes", calibration,
                    "Training-mode passes that set batch-norm statistics of a random model")
      ->check(CLI::NonNegativeNumber);

  std::string suite = "all";
  SuiteOptions suite_opts;
  CLI::App* verify = app.add_subcommand("verify", "Statistical and oracle checks");
  add_common(verify, common);
  std::vector<std::string> suite_choices = suite_names();
  suite_choices.push_back("all");
  verify->add_option("suite", suite, "Suite to run")->check(CLI::IsMember(suite_choices));
  verify->add_option("--fx", suite_opts.f_x, "theorem1: spike rate of X");
  verify->add_option("--m", suite_opts.m, "theorem1: contraction width")->check(CLI::PositiveNumber);
  verify->add_option("--samples", suite_opts.samples, "Monte Carlo samples per case")->check(CLI::PositiveNumber);
  verify->add_option("--coords", suite_opts.gradcheck_coords, "gradcheck: sampled coordinates")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*build) return cmd_build(common);
    if (*train_cmd) return cmd_train(common, tf);
    if (*eval) return cmd_eval(common, ckpt, split);
    if (*audit) return cmd_audit(common, ckpt, audit_images, calibration);
    if (*verify) return cmd_verify(common, suite, suite_opts);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const ContractViolation& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const DimensionError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const UnsupportedLayer& e) {
    spdlog::error("{}", e.what());
    return kExitCheckFailed;
  }
  return kExitUsage;
}
