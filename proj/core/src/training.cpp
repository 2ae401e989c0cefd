#include "xcond/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "xcond/error.hpp"
#include "xcond/random.hpp"

namespace xcond {

namespace {
constexpr std::uint64_t kShuffleTag = 0x5ff1e;
constexpr std::uint64_t kEpochMaskTag = 0xe90c;
constexpr std::uint64_t kStepMaskTag = 0x57e9;
constexpr std::uint64_t kDropoutTag = 0xd40f;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {kShuffleTag, epoch}));
  shuffle_in_place(order, rng);
  return order;
}

void optimizer_update(Parameters& params, Gradients& grads, OptimizerState& state, const TrainRunConfig& run) {
  if (run.grad_clip > 0.0) clip_gradient_norm(grads, run.grad_clip);
  adamw_step(params, grads, state);
}

}  // namespace

std::uint64_t epoch_mask_seed(std::uint64_t run_seed, std::size_t epoch) {
  return derive_seed(run_seed, {kEpochMaskTag, epoch});
}

std::string_view to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }
std::string_view to_string(StopMetric m) { return m == StopMetric::f1 ? "f1" : "loss"; }

TrainRunConfig TrainRunConfig::pretrain_defaults() {
  TrainRunConfig c;
  c.stage = Stage::pretrain;
  c.epochs = 5;
  c.batch_size = 16;
  c.lr = 2e-5;
  c.weight_decay = 0.01;
  return c;
}

TrainRunConfig TrainRunConfig::finetune_defaults() {
  TrainRunConfig c;
  c.stage = Stage::finetune;
  c.epochs = 6;
  c.batch_size = 16;
  c.valid_batch_size = 16;
  c.lr = 2e-5;
  c.weight_decay = 0.01;
  c.patience = 3;
  return c;
}

void TrainRunConfig::validate() const {
  require(epochs >= 1, "epochs must be at least 1");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(valid_batch_size >= 1, "valid_batch_size must be at least 1");
  require(lr > 0.0, "learning rate must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  require(epsilon > 0.0, "Adam epsilon must be positive");
  require(grad_clip >= 0.0, "grad_clip must be non-negative");
  if (stage == Stage::finetune) require(patience.has_value() && *patience >= 1, "finetune requires patience >= 1");
}

std::string TrainLog::to_jsonl(bool include_wall_time) const {
  std::string out;
  for (const EpochRecord& r : epochs) {
    nlohmann::json j;
    j["stage"] = std::string(to_string(stage));
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["valid_metric"] = r.valid_metric;
    if (r.train_perplexity) j["train_perplexity"] = *r.train_perplexity;
    if (r.valid_loss) j["valid_loss"] = *r.valid_loss;
    if (r.valid_f1) j["valid_f1"] = *r.valid_f1;
    if (include_wall_time) j["wall_time_s"] = r.wall_time_s;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

EarlyStopping::EarlyStopping(std::size_t patience, bool higher_is_better)
    : patience_(patience), higher_is_better_(higher_is_better) {
  require(patience >= 1, "patience must be at least 1");
  best_ = higher_is_better ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
}

bool EarlyStopping::update(double metric) {
  ++epochs_;
  const bool improved = higher_is_better_ ? metric > best_ : metric < best_;
  if (improved) {
    best_ = metric;
    best_epoch_ = epochs_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return improved;
}

StoppingTrace replay_early_stopping(const std::vector<double>& metrics, std::size_t patience, std::size_t epoch_cap,
                                    bool higher_is_better) {
  EarlyStopping stopper(patience, higher_is_better);
  StoppingTrace t;
  t.stop_reason = "epoch cap reached";
  for (std::size_t e = 0; e < std::min(epoch_cap, metrics.size()); ++e) {
    stopper.update(metrics[e]);
    t.epochs_run = e + 1;
    if (stopper.should_stop()) {
      t.stop_reason = fmt::format("no improvement for {} epochs", patience);
      break;
    }
  }
  if (t.epochs_run < epoch_cap && t.epochs_run == metrics.size() && !stopper.should_stop())
    t.stop_reason = "metric sequence exhausted";
  t.best_epoch = stopper.best_epoch();
  return t;
}

// ---------------------------------------------------------------------------

TrainResult pretrain(const std::vector<TokenSequence>& train, const std::vector<TokenSequence>& valid,
                     const Vocabulary& vocab, const EncoderConfig& config, const TrainRunConfig& run,
                     const MaskingPolicy& policy, const Parameters* init, const EpochCallback& on_epoch) {
  run.validate();
  require(run.stage == Stage::pretrain, "pretrain needs a run config with stage = pretrain");
  if (train.empty()) throw PreconditionError("pretraining corpus is empty");
  require(!valid.empty(), "pretraining needs a non-empty validation split");
  require(config.vocab_size == vocab.size(), "model vocab_size does not match the vocabulary");
  policy.validate();

  TrainResult result;
  result.params = init ? *init : init_params(config, run.seed);
  result.optimizer = OptimizerState::fresh(config, run.adamw());
  TrainLog& log = result.log;
  log.stage = Stage::pretrain;

  PerplexityOptions eval_opts;
  eval_opts.policy = policy;
  eval_opts.eval_seed = run.eval_seed;
  eval_opts.batch_size = run.valid_batch_size;
  eval_opts.threads = run.threads;
  auto valid_ppl = [&] { return perplexity(result.params, config, valid, vocab, eval_opts).perplexity; };
  log.initial_valid_metric = valid_ppl();

  double best_ppl = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    const auto start = Clock::now();
    std::vector<MaskedExample> masked;
    if (run.mask_granularity == MaskGranularity::per_epoch)
      masked = remask_epoch(train, policy, vocab, epoch_mask_seed(run.seed, epoch));
    const std::vector<std::size_t> order = shuffled_order(train.size(), run.seed, epoch);

    double loss_sum = 0.0;
    std::size_t target_count = 0;
    for (std::size_t start_idx = 0; start_idx < order.size(); start_idx += run.batch_size) {
      const std::size_t end_idx = std::min(order.size(), start_idx + run.batch_size);
      std::vector<MaskedExample> batch;
      batch.reserve(end_idx - start_idx);
      for (std::size_t k = start_idx; k < end_idx; ++k) {
        const std::size_t i = order[k];
        if (run.mask_granularity == MaskGranularity::per_epoch) {
          batch.push_back(masked[i]);
        } else {
          batch.push_back(apply_dynamic_mask(train[i], policy, vocab, derive_seed(run.seed, {kStepMaskTag, log.steps, i})));
        }
      }
      std::erase_if(batch, [](const MaskedExample& ex) { return ex.target_count() == 0; });
      if (batch.empty()) continue;

      ForwardOptions fwd;
      fwd.train = true;
      fwd.dropout_seed = derive_seed(run.seed, {kDropoutTag, log.steps});
      fwd.threads = run.threads;
      ForwardTrace trace = forward_mlm(result.params, config, batch, fwd);
      loss_sum += trace.loss_sum;
      target_count += trace.target_count;
      Gradients grads = backward(trace, result.params, 1.0, run.threads);
      optimizer_update(result.params, grads, result.optimizer, run);
      ++log.steps;
      if (run.eval_every > 0 && log.steps % run.eval_every == 0) log.step_evals.push_back({log.steps, valid_ppl()});
    }
    if (target_count == 0) throw PreconditionError("no masked targets were produced in an epoch");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(target_count);
    rec.train_perplexity = std::exp(rec.train_loss);
    rec.valid_metric = valid_ppl();
    rec.wall_time_s = seconds_since(start);
    if (rec.valid_metric < best_ppl) {
      best_ppl = rec.valid_metric;
      log.best_epoch = epoch;
    }
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  log.stop_reason = "epoch cap reached";
  return result;
}

TrainResult pretrain(const CorpusSplit& corpus, const Vocabulary& vocab, const EncoderConfig& config,
                     const TrainRunConfig& run, const MaskingPolicy& policy, const Parameters* init,
                     const EpochCallback& on_epoch) {
  auto encode_all = [&](const std::vector<Document>& docs) {
    std::vector<TokenSequence> out;
    out.reserve(docs.size());
    for (const Document& d : docs) out.push_back(encode(d.text, vocab, config.max_len));
    return out;
  };
  return pretrain(encode_all(corpus.train), encode_all(corpus.valid), vocab, config, run, policy, init, on_epoch);
}

// ---------------------------------------------------------------------------

LabeledSequences encode_labeled(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t max_len) {
  LabeledSequences out;
  out.sequences.reserve(docs.size());
  out.labels.reserve(docs.size());
  for (const Document& d : docs) {
    if (!d.stress_label) throw PreconditionError("document '" + d.id + "' has no stress label");
    out.sequences.push_back(encode(d.text, vocab, max_len));
    out.labels.push_back(static_cast<int>(*d.stress_label));
  }
  return out;
}

std::vector<int> predict(const Parameters& params, const EncoderConfig& config, const std::vector<TokenSequence>& data,
                         std::size_t batch_size, std::size_t threads) {
  std::vector<int> out;
  out.reserve(data.size());
  ForwardOptions fwd;
  fwd.threads = threads;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<TokenSequence> batch(data.begin() + static_cast<std::ptrdiff_t>(start),
                                     data.begin() + static_cast<std::ptrdiff_t>(end));
    for (int p : forward_classify(params, config, batch, std::nullopt, fwd).predictions()) out.push_back(p);
  }
  return out;
}

namespace {

struct ValidScore {
  double f1 = 0.0;
  double loss = 0.0;
};

ValidScore score_validation(const Parameters& params, const EncoderConfig& config, const LabeledSequences& valid,
                            const TrainRunConfig& run) {
  std::vector<int> preds;
  preds.reserve(valid.sequences.size());
  double loss_sum = 0.0;
  ForwardOptions fwd;
  fwd.threads = run.threads;
  for (std::size_t start = 0; start < valid.sequences.size(); start += run.valid_batch_size) {
    const std::size_t end = std::min(valid.sequences.size(), start + run.valid_batch_size);
    std::vector<TokenSequence> batch(valid.sequences.begin() + static_cast<std::ptrdiff_t>(start),
                                     valid.sequences.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<int> labels(valid.labels.begin() + static_cast<std::ptrdiff_t>(start),
                            valid.labels.begin() + static_cast<std::ptrdiff_t>(end));
    ForwardTrace trace = forward_classify(params, config, batch, labels, fwd);
    loss_sum += trace.loss_sum;
    for (int p : trace.predictions()) preds.push_back(p);
  }
  ValidScore s;
  s.f1 = classification_metrics(preds, valid.labels, 1).f1;
  s.loss = loss_sum / static_cast<double>(valid.sequences.size());
  return s;
}

}  // namespace

TrainResult finetune(const Parameters& init, const EncoderConfig& config, const LabeledSequences& train,
                     const LabeledSequences& valid, const TrainRunConfig& run, const EpochCallback& on_epoch) {
  run.validate();
  require(run.stage == Stage::finetune, "finetune needs a run config with stage = finetune");
  require(!train.sequences.empty() && train.sequences.size() == train.labels.size(),
          "finetune needs a non-empty labeled training set");
  require(!valid.sequences.empty() && valid.sequences.size() == valid.labels.size(),
          "finetune needs a non-empty labeled validation set");
  const bool has_pos = std::find(train.labels.begin(), train.labels.end(), 1) != train.labels.end();
  const bool has_neg = std::find(train.labels.begin(), train.labels.end(), 0) != train.labels.end();
  if (!(has_pos && has_neg)) throw PreconditionError("training labels contain a single class");

  TrainResult result;
  result.params = init;
  result.optimizer = OptimizerState::fresh(config, run.adamw());
  TrainLog& log = result.log;
  log.stage = Stage::finetune;

  const bool use_f1 = run.stop_metric == StopMetric::f1;
  EarlyStopping stopper(*run.patience, use_f1);
  Parameters best = result.params;
  OptimizerState best_optimizer = result.optimizer;
  const ValidScore initial = score_validation(result.params, config, valid, run);
  log.initial_valid_metric = use_f1 ? initial.f1 : initial.loss;
  log.stop_reason = "epoch cap reached";

  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    const auto start = Clock::now();
    const std::vector<std::size_t> order = shuffled_order(train.sequences.size(), run.seed, epoch);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < order.size(); s += run.batch_size) {
      const std::size_t e = std::min(order.size(), s + run.batch_size);
      std::vector<TokenSequence> batch;
      std::vector<int> labels;
      for (std::size_t k = s; k < e; ++k) {
        batch.push_back(train.sequences[order[k]]);
        labels.push_back(train.labels[order[k]]);
      }
      ForwardOptions fwd;
      fwd.train = true;
      fwd.dropout_seed = derive_seed(run.seed, {kDropoutTag, log.steps});
      fwd.threads = run.threads;
      ForwardTrace trace = forward_classify(result.params, config, batch, labels, fwd);
      loss_sum += trace.loss_sum;
      count += trace.target_count;
      Gradients grads = backward(trace, result.params, 1.0, run.threads);
      optimizer_update(result.params, grads, result.optimizer, run);
      ++log.steps;
      if (run.eval_every > 0 && log.steps % run.eval_every == 0) {
        const ValidScore vs = score_validation(result.params, config, valid, run);
        log.step_evals.push_back({log.steps, use_f1 ? vs.f1 : vs.loss});
      }
    }

    const ValidScore vs = score_validation(result.params, config, valid, run);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(count);
    rec.valid_f1 = vs.f1;
    rec.valid_loss = vs.loss;
    rec.valid_metric = use_f1 ? vs.f1 : vs.loss;
    rec.wall_time_s = seconds_since(start);
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (stopper.update(rec.valid_metric)) {
      best = result.params;
      best_optimizer = result.optimizer;
    }
    if (stopper.should_stop()) {
      log.stop_reason = fmt::format("no improvement for {} epochs", *run.patience);
      break;
    }
  }
  log.best_epoch = stopper.best_epoch();
  result.params = std::move(best);
  result.optimizer = std::move(best_optimizer);
  return result;
}

TrainResult finetune(const Parameters& init, const EncoderConfig& config, const Vocabulary& vocab,
                     const std::vector<Document>& train, const std::vector<Document>& valid,
                     const TrainRunConfig& run, const EpochCallback& on_epoch) {
  require(vocab.size() == config.vocab_size, "model vocab_size does not match the vocabulary");
  return finetune(init, config, encode_labeled(train, vocab, config.max_len), encode_labeled(valid, vocab, config.max_len),
                  run, on_epoch);
}

}  // namespace xcond
