#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcond/corpus.hpp"
#include "xcond/experiment.hpp"
#include "xcond/masking.hpp"
#include "xcond/model.hpp"
#include "xcond/training.hpp"

namespace xcond {

struct CorpusSection {
  /// Conditions kept in the pretraining corpus.
  std::vector<Condition> conditions = {Condition::depression, Condition::anxiety, Condition::ptsd};
  /// Self-report rule file (JSONL); empty selects the built-in rules.
  std::string rules;
  /// Label unlabeled posts with the self-report matcher.
  bool match_self_report = true;
  bool dedupe = true;
  double valid_fraction = 0.1;
  std::uint64_t split_seed = 42;
};

struct TokenizerSection {
  std::size_t max_size = 30000;
  std::size_t min_freq = 1;
};

struct MaskingSection {
  MaskingPolicy policy;
  MaskGranularity granularity = MaskGranularity::per_epoch;
};

struct EvalSection {
  std::uint64_t eval_seed = 20240517;
  bool full_target = false;
  std::size_t batch_size = 16;
  int positive_label = 1;
};

struct ExperimentSection {
  double overlap_rate = 0.8;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t pretrain_epochs = 5;
  std::size_t n_pretrain_docs = 1500;
  std::size_t n_task_docs = 400;
  std::uint64_t data_seed = 7;
};

/// The whole configuration document. Missing keys take these defaults; the
/// pretrain and finetune sections default to the continual-training and
/// fine-tuning hyperparameters (lr 2e-5, batch 16, wd 0.01; 5 epochs, or a cap
/// of 6 with patience 3).
struct RunConfig {
  CorpusSection corpus;
  TokenizerSection tokenizer;
  MaskingSection masking;
  /// vocab_size is not configurable; it comes from the vocabulary.
  EncoderConfig model;
  TrainRunConfig pretrain = TrainRunConfig::pretrain_defaults();
  TrainRunConfig finetune = TrainRunConfig::finetune_defaults();
  EvalSection eval;
  ExperimentSection experiment;

  /// Pretrain run with the masking granularity and thread count applied.
  TrainRunConfig pretrain_run() const;
  TrainRunConfig finetune_run() const;
  /// The built-in benchmark adjusted by the experiment section.
  ExperimentSpec experiment_spec() const;
};

RunConfig default_config();

/// Every key, in section order.
nlohmann::json to_json(const RunConfig& config);
/// Pretty-printed to_json, newline-terminated.
std::string dump_config(const RunConfig& config);

/// Strict parse: unknown sections or keys, wrong types, and invalid values all
/// land in one ConfigError whose message lists each problem on its own line.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// --seed: replaces the pretrain, finetune, split and experiment data seeds.
void apply_seed_override(RunConfig& config, std::uint64_t seed);

nlohmann::json to_json(const TrainRunConfig& run);
nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

}  // namespace xcond
