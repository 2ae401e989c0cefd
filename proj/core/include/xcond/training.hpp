#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xcond/corpus.hpp"
#include "xcond/eval.hpp"
#include "xcond/masking.hpp"
#include "xcond/model.hpp"
#include "xcond/optimizer.hpp"
#include "xcond/tokenizer.hpp"

namespace xcond {

enum class Stage { pretrain, finetune };
enum class StopMetric { f1, loss };

std::string_view to_string(Stage s);
std::string_view to_string(StopMetric m);

struct TrainRunConfig {
  Stage stage = Stage::pretrain;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double lr = 2e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Required for finetune; epochs without improvement before stopping.
  std::optional<std::size_t> patience;
  std::uint64_t seed = 42;
  /// Extra validation every N optimizer steps (0 = only at epoch ends).
  std::size_t eval_every = 0;
  /// Max global gradient norm; 0 disables clipping.
  double grad_clip = 0.0;
  MaskGranularity mask_granularity = MaskGranularity::per_epoch;
  StopMetric stop_metric = StopMetric::f1;
  std::size_t valid_batch_size = 16;
  std::uint64_t eval_seed = 20240517;
  std::size_t threads = 1;

  /// Continual-training defaults: lr 2e-5, batch 16, 5 epochs, weight decay 0.01.
  static TrainRunConfig pretrain_defaults();
  /// Fine-tuning defaults: lr 2e-5, batch 16, epoch cap 6, weight decay 0.01, patience 3.
  static TrainRunConfig finetune_defaults();

  void validate() const;
  AdamWHyperparams adamw() const { return {lr, beta1, beta2, epsilon, weight_decay}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// Pretrain: validation perplexity. Finetune: validation F1 (or loss when stopping on loss).
  double valid_metric = 0.0;
  /// Pretrain only: exp(train_loss) under the training masks.
  std::optional<double> train_perplexity;
  /// Finetune only.
  std::optional<double> valid_loss;
  std::optional<double> valid_f1;
  double wall_time_s = 0.0;
};

struct StepEval {
  std::size_t step = 0;
  double valid_metric = 0.0;
};

struct TrainLog {
  Stage stage = Stage::pretrain;
  /// Metric of the starting parameters (pretrain: validation perplexity).
  std::optional<double> initial_valid_metric;
  std::vector<EpochRecord> epochs;
  std::vector<StepEval> step_evals;
  std::size_t best_epoch = 0;
  std::string stop_reason;
  std::size_t steps = 0;

  /// One JSON object per epoch. Wall-clock fields are omitted unless requested.
  std::string to_jsonl(bool include_wall_time = true) const;
};

/// Tracks the best metric and the run of non-improving epochs.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, bool higher_is_better = true);
  /// Records one epoch's metric; returns true when it strictly improves on the best.
  bool update(double metric);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_; }
  std::size_t epochs_seen() const { return epochs_; }

 private:
  std::size_t patience_;
  bool higher_is_better_;
  double best_ = 0.0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  std::size_t epochs_ = 0;
};

struct StoppingTrace {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::string stop_reason;
};

/// Replays the early-stopping rule over a metric sequence with an epoch cap.
StoppingTrace replay_early_stopping(const std::vector<double>& metrics, std::size_t patience, std::size_t epoch_cap,
                                    bool higher_is_better = true);

struct TrainResult {
  Parameters params;
  OptimizerState optimizer;
  TrainLog log;
};

/// Observer hook invoked after every epoch record is appended.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seed handed to remask_epoch for a 1-based epoch under per-epoch masking.
std::uint64_t epoch_mask_seed(std::uint64_t run_seed, std::size_t epoch);

/// Masked-language-model training. Starts from `init` when given (continual
/// training), otherwise from init_params(config, run.seed).
TrainResult pretrain(const std::vector<TokenSequence>& train, const std::vector<TokenSequence>& valid,
                     const Vocabulary& vocab, const EncoderConfig& config, const TrainRunConfig& run,
                     const MaskingPolicy& policy = {}, const Parameters* init = nullptr,
                     const EpochCallback& on_epoch = {});

TrainResult pretrain(const CorpusSplit& corpus, const Vocabulary& vocab, const EncoderConfig& config,
                     const TrainRunConfig& run, const MaskingPolicy& policy = {}, const Parameters* init = nullptr,
                     const EpochCallback& on_epoch = {});

struct LabeledSequences {
  std::vector<TokenSequence> sequences;
  std::vector<int> labels;
};

/// Throws PreconditionError on unlabeled documents.
LabeledSequences encode_labeled(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t max_len);

/// Sequence classification with early stopping; returns the best-epoch snapshot
/// of parameters and optimizer state.
/// Throws PreconditionError when the training labels hold a single class.
TrainResult finetune(const Parameters& init, const EncoderConfig& config, const LabeledSequences& train,
                     const LabeledSequences& valid, const TrainRunConfig& run, const EpochCallback& on_epoch = {});

TrainResult finetune(const Parameters& init, const EncoderConfig& config, const Vocabulary& vocab,
                     const std::vector<Document>& train, const std::vector<Document>& valid,
                     const TrainRunConfig& run, const EpochCallback& on_epoch = {});

/// Eval-mode predictions (no dropout), ties toward class 0.
std::vector<int> predict(const Parameters& params, const EncoderConfig& config,
                         const std::vector<TokenSequence>& data, std::size_t batch_size = 16,
                         std::size_t threads = 1);

}  // namespace xcond
