#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcond/eval.hpp"
#include "xcond/synthetic.hpp"
#include "xcond/training.hpp"

namespace xcond {

/// A paired comparison of fine-tuning from scratch against pretrain-then-finetune.
/// For every seed both arms start from the same initial parameters and share the
/// fine-tuning config; only the MLM stage differs.
struct ExperimentSpec {
  GeneratorSpec generator;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  /// vocab_size is filled in per seed from the generated data.
  EncoderConfig model;
  MaskingPolicy masking;
  TrainRunConfig pretrain = TrainRunConfig::pretrain_defaults();
  TrainRunConfig finetune = TrainRunConfig::finetune_defaults();
  /// 0 makes the pretrained arm identical to the scratch arm.
  std::size_t pretrain_epochs = 5;
  std::size_t max_len = 32;
  std::string name = "synthetic";

  void validate() const;
};

/// Desk-scale benchmark: shared-marker synthetic data, small encoder, learning
/// rates raised so a few hundred steps can move a freshly initialized model.
ExperimentSpec builtin_benchmark(double overlap_rate);

struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricsReport scratch;
  MetricsReport pretrained;
  std::size_t scratch_best_epoch = 0;
  std::size_t pretrained_best_epoch = 0;
  /// Held-out perplexity after the MLM stage (absent when pretrain_epochs = 0).
  std::optional<double> pretrain_valid_perplexity;
  std::size_t vocab_size = 0;

  double difference() const { return pretrained.f1 - scratch.f1; }
};

struct ExperimentReport {
  std::string name;
  double overlap_rate = 0.0;
  std::vector<SeedOutcome> seeds;
  double mean_f1_scratch = 0.0;
  double mean_f1_pretrained = 0.0;
  double mean_difference = 0.0;
  /// Seeds where pretraining won / lost / tied on test F1 (for a sign test).
  std::size_t wins = 0, losses = 0, ties = 0;
};

/// Throws PreconditionError for fewer than two seeds.
ExperimentReport transfer_experiment(const ExperimentSpec& spec, std::size_t threads = 1);

nlohmann::json to_json(const ExperimentReport& report);
std::string format_table(const ExperimentReport& report);

}  // namespace xcond
