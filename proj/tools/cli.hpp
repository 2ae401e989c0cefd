#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace xcond::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;
inline constexpr int kIntegrity = 3;

enum class OutputFormat { table, json };

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = ".";
  OutputFormat format = OutputFormat::table;
};

struct BuildCorpusOptions {
  CommonOptions common;
  std::filesystem::path input;
  std::optional<std::filesystem::path> rules;
};

struct BuildVocabOptions {
  CommonOptions common;
  std::vector<std::filesystem::path> inputs;
};

struct SynthOptions {
  CommonOptions common;
};

struct TrainOptions {
  CommonOptions common;
  std::filesystem::path train;
  std::filesystem::path valid;
  std::filesystem::path vocab;
  std::optional<std::filesystem::path> init;
  /// Pretrain only: write the first N epoch-1 masked examples to masks.txt.
  std::size_t dump_masks = 0;
};

struct EvalOptions {
  CommonOptions common;
  std::filesystem::path checkpoint;
  std::filesystem::path vocab;
  std::filesystem::path data;
  bool perplexity = false;
};

struct ExperimentOptions {
  CommonOptions common;
};

struct InspectOptions {
  CommonOptions common;
  std::filesystem::path checkpoint;
};

struct ConfigOptions {
  CommonOptions common;
};

/// Each command writes its artifacts under common.out, prints a report to `out`,
/// and diagnostics to `err`. The return value is the process exit code.
int cmd_build_corpus(const BuildCorpusOptions& opts, std::ostream& out, std::ostream& err);
int cmd_build_vocab(const BuildVocabOptions& opts, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthOptions& opts, std::ostream& out, std::ostream& err);
int cmd_pretrain(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_finetune(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_experiment(const ExperimentOptions& opts, std::ostream& out, std::ostream& err);
int cmd_inspect(const InspectOptions& opts, std::ostream& out, std::ostream& err);
int cmd_config(const ConfigOptions& opts, std::ostream& out, std::ostream& err);

/// Parses a full command line (args[0] is the program name) and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xcond::cli
