#include "xcond/experiment.hpp"

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/parallel.hpp"
#include "xcond/random.hpp"

namespace xcond {

void ExperimentSpec::validate() const {
  if (seeds.size() < 2) throw PreconditionError("a transfer experiment needs at least 2 seeds");
  generator.validate();
  masking.validate();
  require(pretrain.stage == Stage::pretrain && finetune.stage == Stage::finetune, "experiment stage configs are swapped");
  finetune.validate();
  if (pretrain_epochs > 0) {
    TrainRunConfig p = pretrain;
    p.epochs = pretrain_epochs;
    p.validate();
  }
  require(max_len >= 3, "max_len must be at least 3");
}

ExperimentSpec builtin_benchmark(double overlap_rate) {
  ExperimentSpec spec;
  spec.name = fmt::format("builtin-overlap-{:.2f}", overlap_rate);
  spec.generator.overlap_rate = overlap_rate;
  spec.generator.n_pretrain_docs = 1500;
  spec.generator.n_task_docs = 400;
  spec.generator.markers_per_condition = 20;
  spec.seeds = {1, 2, 3, 4, 5};
  spec.model.d_model = 32;
  spec.model.n_heads = 2;
  spec.model.n_layers = 2;
  spec.model.d_ff = 128;
  spec.model.dropout_rate = 0.1;
  spec.max_len = 24;
  spec.pretrain.lr = 1e-3;
  spec.pretrain.weight_decay = 0.01;
  spec.pretrain.batch_size = 16;
  spec.pretrain_epochs = 5;
  spec.finetune.lr = 3e-3;
  spec.finetune.weight_decay = 0.01;
  spec.finetune.batch_size = 16;
  spec.finetune.epochs = 6;
  spec.finetune.patience = 3;
  return spec;
}

namespace {

SeedOutcome run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  GeneratorSpec gen = spec.generator;
  gen.seed = derive_seed(spec.generator.seed, {seed});
  const std::vector<Document> corpus = generate_pretrain_corpus(gen);
  const TaskSplits task = generate_task(gen);

  std::vector<std::string_view> texts;
  for (const auto* group : {&corpus, &task.train, &task.valid, &task.test})
    for (const Document& d : *group) texts.emplace_back(d.text);
  const Vocabulary vocab = build_vocab_from_texts(texts, 1u << 20, 1);

  EncoderConfig config = spec.model;
  config.vocab_size = vocab.size();
  config.max_len = spec.max_len;

  const Parameters init = init_params(config, derive_seed(seed, {0x1417ULL}));
  TrainRunConfig ft = spec.finetune;
  ft.seed = derive_seed(seed, {0xf1eULL});

  const LabeledSequences train = encode_labeled(task.train, vocab, config.max_len);
  const LabeledSequences valid = encode_labeled(task.valid, vocab, config.max_len);
  const LabeledSequences test = encode_labeled(task.test, vocab, config.max_len);

  SeedOutcome out;
  out.seed = seed;
  out.vocab_size = vocab.size();

  const TrainResult scratch = finetune(init, config, train, valid, ft);
  out.scratch = classification_metrics(predict(scratch.params, config, test.sequences), test.labels, 1);
  out.scratch_best_epoch = scratch.log.best_epoch;

  Parameters start = init;
  if (spec.pretrain_epochs > 0) {
    TrainRunConfig pt = spec.pretrain;
    pt.epochs = spec.pretrain_epochs;
    pt.seed = derive_seed(seed, {0x9e7ULL});
    const CorpusSplit split = dedupe_and_split(corpus, 0.1, pt.seed);
    TrainResult pre = pretrain(split, vocab, config, pt, spec.masking, &init);
    out.pretrain_valid_perplexity = pre.log.epochs.back().valid_metric;
    start = std::move(pre.params);
  }
  const TrainResult tuned = finetune(start, config, train, valid, ft);
  out.pretrained = classification_metrics(predict(tuned.params, config, test.sequences), test.labels, 1);
  out.pretrained_best_epoch = tuned.log.best_epoch;
  return out;
}

}  // namespace

ExperimentReport transfer_experiment(const ExperimentSpec& spec, std::size_t threads) {
  spec.validate();
  ExperimentReport report;
  report.name = spec.name;
  report.overlap_rate = spec.generator.overlap_rate;
  report.seeds.resize(spec.seeds.size());
  parallel_for(spec.seeds.size(), threads, [&](std::size_t i) { report.seeds[i] = run_seed(spec, spec.seeds[i]); });

  for (const SeedOutcome& s : report.seeds) {
    report.mean_f1_scratch += s.scratch.f1;
    report.mean_f1_pretrained += s.pretrained.f1;
    const double diff = s.difference();
    if (diff > 0) ++report.wins;
    else if (diff < 0) ++report.losses;
    else ++report.ties;
  }
  const double n = static_cast<double>(report.seeds.size());
  report.mean_f1_scratch /= n;
  report.mean_f1_pretrained /= n;
  double diff_sum = 0.0;
  for (const SeedOutcome& s : report.seeds) diff_sum += s.difference();
  report.mean_difference = diff_sum / n;
  return report;
}

nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["overlap_rate"] = r.overlap_rate;
  j["seeds"] = nlohmann::json::array();
  for (const SeedOutcome& s : r.seeds) {
    nlohmann::json row;
    row["seed"] = s.seed;
    row["f1_scratch"] = s.scratch.f1;
    row["f1_pretrained"] = s.pretrained.f1;
    row["difference"] = s.difference();
    row["scratch"] = to_json(s.scratch);
    row["pretrained"] = to_json(s.pretrained);
    row["scratch_best_epoch"] = s.scratch_best_epoch;
    row["pretrained_best_epoch"] = s.pretrained_best_epoch;
    row["pretrain_valid_perplexity"] =
        s.pretrain_valid_perplexity ? nlohmann::json(*s.pretrain_valid_perplexity) : nlohmann::json();
    row["vocab_size"] = s.vocab_size;
    j["seeds"].push_back(row);
  }
  j["mean_f1_scratch"] = r.mean_f1_scratch;
  j["mean_f1_pretrained"] = r.mean_f1_pretrained;
  j["mean_difference"] = r.mean_difference;
  j["wins"] = r.wins;
  j["losses"] = r.losses;
  j["ties"] = r.ties;
  return j;
}

std::string format_table(const ExperimentReport& r) {
  std::string out = fmt::format("{} (overlap_rate {:.2f})\n", r.name, r.overlap_rate);
  out += fmt::format("{:>8} {:>12} {:>14} {:>10}\n", "seed", "F1 scratch", "F1 pretrained", "diff");
  out += std::string(47, '-') + "\n";
  for (const SeedOutcome& s : r.seeds)
    out += fmt::format("{:>8} {:>12.4f} {:>14.4f} {:>+10.4f}\n", s.seed, s.scratch.f1, s.pretrained.f1, s.difference());
  out += std::string(47, '-') + "\n";
  out += fmt::format("{:>8} {:>12.4f} {:>14.4f} {:>+10.4f}\n", "mean", r.mean_f1_scratch, r.mean_f1_pretrained,
                     r.mean_difference);
  out += fmt::format("pretraining better on {} seeds, worse on {}, tied on {}\n", r.wins, r.losses, r.ties);
  return out;
}

}  // namespace xcond
