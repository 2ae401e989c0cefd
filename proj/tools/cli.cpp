#include "cli.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "xcond/checkpoint.hpp"
#include "xcond/config.hpp"
#include "xcond/corpus.hpp"
#include "xcond/error.hpp"
#include "xcond/eval.hpp"
#include "xcond/experiment.hpp"
#include "xcond/io.hpp"
#include "xcond/masking.hpp"
#include "xcond/parallel.hpp"
#include "xcond/synthetic.hpp"
#include "xcond/tokenizer.hpp"
#include "xcond/training.hpp"

namespace xcond::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig resolve_config(const CommonOptions& c) {
  RunConfig cfg = c.config ? load_config(*c.config) : default_config();
  if (c.seed) apply_seed_override(cfg, *c.seed);
  return cfg;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

std::vector<Document> load_documents(const fs::path& path, std::ostream& err) {
  const auto format = format_from_extension(path);
  if (!format) throw FormatError(fmt::format("cannot tell the format of '{}' (expected .jsonl or .tsv)", path.string()));
  IngestResult r = ingest_documents(path, *format);
  const IngestSummary& s = r.summary;
  if (s.skipped_empty + s.skipped_malformed > 0)
    err << fmt::format("{}: {} records, {} accepted, {} empty, {} malformed\n", path.string(), s.records, s.accepted,
                       s.skipped_empty, s.skipped_malformed);
  return std::move(r.documents);
}

std::vector<TokenSequence> encode_all(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(docs.size());
  for (const Document& d : docs) out.push_back(encode(d.text, vocab, max_len));
  return out;
}

std::string epoch_timing_jsonl(const TrainLog& log) {
  std::string out;
  for (const EpochRecord& r : log.epochs) out += json{{"epoch", r.epoch}, {"wall_time_s", r.wall_time_s}}.dump() + "\n";
  return out;
}

struct Start {
  EncoderConfig model;
  Parameters params;
  Provenance provenance;
};

// Fresh initialization, or the parameters of a parent checkpoint that must share the vocabulary.
Start starting_point(const RunConfig& cfg, const TrainOptions& opts, const Vocabulary& vocab, const TrainRunConfig& run,
                     const char* stage) {
  Start s;
  s.provenance.stage = stage;
  s.provenance.run = run;
  if (opts.init) {
    const std::string bytes = read_file(*opts.init);
    Checkpoint parent = deserialize_checkpoint(bytes);
    if (parent.vocab_sha256 != vocab.hash())
      throw PreconditionError(fmt::format("vocabulary '{}' does not match the one checkpoint '{}' was trained with",
                                          opts.vocab.string(), opts.init->string()));
    s.model = parent.config;
    s.params = std::move(parent.params);
    s.provenance.init_seed = parent.provenance.init_seed;
    s.provenance.parent_sha256 = sha256_hex(bytes);
    s.provenance.parent = to_json(parent.provenance);
  } else {
    s.model = cfg.model;
    s.model.vocab_size = vocab.size();
    s.model.validate();
    s.params = init_params(s.model, run.seed);
    s.provenance.init_seed = run.seed;
  }
  return s;
}

void write_checkpoint_and_logs(const fs::path& dir, const Start& start, const TrainResult& res, const Vocabulary& vocab,
                               const fs::path& vocab_path) {
  Checkpoint ck;
  ck.config = start.model;
  ck.params = res.params;
  ck.vocab_sha256 = vocab.hash();
  ck.vocab_file = vocab_path.filename().string();
  ck.provenance = start.provenance;
  ck.provenance.epochs_run = res.log.epochs.size();
  ck.provenance.best_epoch = res.log.best_epoch;
  ck.provenance.stop_reason = res.log.stop_reason;
  ck.optimizer = res.optimizer;
  save_checkpoint(dir / "checkpoint.bin", ck);
  atomic_write(dir / "train_log.jsonl", res.log.to_jsonl(false));
  atomic_write(dir / "timing.jsonl", epoch_timing_jsonl(res.log));
}

json log_json(const TrainLog& log) {
  json epochs = json::array();
  std::istringstream lines(log.to_jsonl(false));
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) epochs.push_back(json::parse(line));
  json j;
  j["stage"] = std::string(to_string(log.stage));
  j["initial_valid_metric"] = log.initial_valid_metric ? json(*log.initial_valid_metric) : json();
  j["epochs"] = epochs;
  j["best_epoch"] = log.best_epoch;
  j["stop_reason"] = log.stop_reason;
  j["steps"] = log.steps;
  return j;
}

void add_common(CLI::App& app, CommonOptions& c, bool with_out = true) {
  app.add_option("--config", c.config, "Configuration file (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "Override every seed in the configuration");
  if (with_out) app.add_option("--out", c.out, "Output directory")->capture_default_str();
  app.add_option("--format", c.format, "Report format")
      ->transform(CLI::CheckedTransformer(std::map<std::string, OutputFormat>{{"table", OutputFormat::table},
                                                                              {"json", OutputFormat::json}}))
      ->capture_default_str();
}

}  // namespace

int cmd_build_corpus(const BuildCorpusOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    const fs::path rules_path = opts.rules ? *opts.rules : fs::path(cfg.corpus.rules);
    const SelfReportRuleSet rules = rules_path.empty() ? SelfReportRuleSet::defaults() : SelfReportRuleSet::load_jsonl(rules_path);

    std::vector<Document> docs = load_documents(opts.input, err);
    std::size_t matched = 0;
    std::vector<Document> kept;
    for (Document& d : docs) {
      if (!d.condition && cfg.corpus.match_self_report) {
        d.condition = rules.match(d.text);
        if (d.condition) ++matched;
      }
      if (d.condition && std::find(cfg.corpus.conditions.begin(), cfg.corpus.conditions.end(), *d.condition) !=
                             cfg.corpus.conditions.end())
        kept.push_back(std::move(d));
    }
    if (kept.empty()) throw PreconditionError(fmt::format("no document in '{}' belongs to a selected condition", opts.input.string()));

    const CorpusSplit split = dedupe_and_split(kept, cfg.corpus.valid_fraction, cfg.corpus.split_seed, cfg.corpus.dedupe);
    std::vector<Document> all = split.train;
    all.insert(all.end(), split.valid.begin(), split.valid.end());
    const CompositionReport report = compute_composition(all);

    json summary = to_json(report);
    summary["input_documents"] = docs.size();
    summary["matched_by_rules"] = matched;
    summary["kept"] = kept.size();
    summary["duplicates_removed"] = split.duplicates_removed;
    summary["train"] = split.train.size();
    summary["valid"] = split.valid.size();

    fs::create_directories(opts.common.out);
    atomic_write(opts.common.out / "train.jsonl", to_jsonl(split.train));
    atomic_write(opts.common.out / "valid.jsonl", to_jsonl(split.valid));
    atomic_write(opts.common.out / "composition.json", summary.dump(2) + "\n");

    if (opts.common.format == OutputFormat::json) {
      out << summary.dump(2) << "\n";
    } else {
      out << format_table(report);
      out << fmt::format("{} documents read, {} matched by self-report rules, {} kept, {} duplicates removed\n",
                         docs.size(), matched, kept.size(), split.duplicates_removed);
      out << fmt::format("train {} / valid {}\n", split.train.size(), split.valid.size());
    }
    return kOk;
  });
}

int cmd_build_vocab(const BuildVocabOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    std::vector<Document> docs;
    for (const fs::path& p : opts.inputs) {
      std::vector<Document> part = load_documents(p, err);
      docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const Vocabulary vocab = build_vocab(docs, cfg.tokenizer.max_size, cfg.tokenizer.min_freq);
    vocab.save(opts.common.out / "vocab.txt");
    if (opts.common.format == OutputFormat::json)
      out << json{{"size", vocab.size()}, {"sha256", vocab.hash()}, {"documents", docs.size()}}.dump(2) << "\n";
    else
      out << fmt::format("vocabulary of {} tokens from {} documents, sha256 {}\n", vocab.size(), docs.size(), vocab.hash());
    return kOk;
  });
}

int cmd_synth(const SynthOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    const GeneratorSpec gen = cfg.experiment_spec().generator;
    const std::vector<Document> corpus = generate_pretrain_corpus(gen);
    const TaskSplits task = generate_task(gen);
    atomic_write(opts.common.out / "pretrain.jsonl", to_jsonl(corpus));
    atomic_write(opts.common.out / "task_train.jsonl", to_jsonl(task.train));
    atomic_write(opts.common.out / "task_valid.jsonl", to_jsonl(task.valid));
    atomic_write(opts.common.out / "task_test.jsonl", to_jsonl(task.test));
    const json j = {{"pretrain", corpus.size()},
                    {"task_train", task.train.size()},
                    {"task_valid", task.valid.size()},
                    {"task_test", task.test.size()},
                    {"overlap_rate", gen.overlap_rate},
                    {"seed", gen.seed}};
    if (opts.common.format == OutputFormat::json) out << j.dump(2) << "\n";
    else
      out << fmt::format("{} pretraining posts, task splits {}/{}/{} (overlap_rate {:.2f}, seed {})\n", corpus.size(),
                         task.train.size(), task.valid.size(), task.test.size(), gen.overlap_rate, gen.seed);
    return kOk;
  });
}

int cmd_pretrain(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    const Vocabulary vocab = Vocabulary::load(opts.vocab);
    const TrainRunConfig run = cfg.pretrain_run();
    const Start start = starting_point(cfg, opts, vocab, run, "pretrain");
    const std::vector<TokenSequence> train = encode_all(load_documents(opts.train, err), vocab, start.model.max_len);
    const std::vector<TokenSequence> valid = encode_all(load_documents(opts.valid, err), vocab, start.model.max_len);

    fs::create_directories(opts.common.out);
    if (opts.dump_masks > 0) {
      const std::vector<TokenSequence> head(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(std::min(opts.dump_masks, train.size())));
      std::string text = run.mask_granularity == MaskGranularity::per_epoch
                             ? "# epoch 1 masks as used in training\n"
                             : "# per-epoch masks for seed inspection; per-step training masks differ\n";
      const auto masked = remask_epoch(head, cfg.masking.policy, vocab, epoch_mask_seed(run.seed, 1));
      for (std::size_t i = 0; i < masked.size(); ++i)
        text += fmt::format("## example {}\n{}\n", i, dump_masked_example(masked[i], vocab));
      atomic_write(opts.common.out / "masks.txt", text);
    }

    const TrainResult res = pretrain(train, valid, vocab, start.model, run, cfg.masking.policy, &start.params,
                                     [&](const EpochRecord& r) {
                                       err << fmt::format("pretrain epoch {} train loss {:.4f} valid perplexity {:.3f}\n",
                                                          r.epoch, r.train_loss, r.valid_metric);
                                     });
    write_checkpoint_and_logs(opts.common.out, start, res, vocab, opts.vocab);

    if (opts.common.format == OutputFormat::json) {
      out << log_json(res.log).dump(2) << "\n";
    } else {
      out << fmt::format("{:>6} {:>12} {:>17} {:>17}\n", "epoch", "train loss", "train perplexity", "valid perplexity");
      if (res.log.initial_valid_metric)
        out << fmt::format("{:>6} {:>12} {:>17} {:>17.3f}\n", 0, "-", "-", *res.log.initial_valid_metric);
      for (const EpochRecord& r : res.log.epochs)
        out << fmt::format("{:>6} {:>12.4f} {:>17.3f} {:>17.3f}\n", r.epoch, r.train_loss, r.train_perplexity.value_or(0.0),
                           r.valid_metric);
      out << fmt::format("checkpoint written to {}\n", (opts.common.out / "checkpoint.bin").string());
    }
    return kOk;
  });
}

int cmd_finetune(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    const Vocabulary vocab = Vocabulary::load(opts.vocab);
    const TrainRunConfig run = cfg.finetune_run();
    const Start start = starting_point(cfg, opts, vocab, run, "finetune");
    const std::vector<Document> train = load_documents(opts.train, err);
    const std::vector<Document> valid = load_documents(opts.valid, err);

    fs::create_directories(opts.common.out);
    const TrainResult res = finetune(start.params, start.model, vocab, train, valid, run, [&](const EpochRecord& r) {
      err << fmt::format("finetune epoch {} train loss {:.4f} valid F1 {:.4f}\n", r.epoch, r.train_loss,
                         r.valid_f1.value_or(0.0));
    });
    write_checkpoint_and_logs(opts.common.out, start, res, vocab, opts.vocab);

    if (opts.common.format == OutputFormat::json) {
      out << log_json(res.log).dump(2) << "\n";
    } else {
      out << fmt::format("{:>6} {:>12} {:>12} {:>10}\n", "epoch", "train loss", "valid loss", "valid F1");
      for (const EpochRecord& r : res.log.epochs)
        out << fmt::format("{:>6} {:>12.4f} {:>12.4f} {:>10.4f}{}\n", r.epoch, r.train_loss, r.valid_loss.value_or(0.0),
                           r.valid_f1.value_or(0.0), r.epoch == res.log.best_epoch ? "  *" : "");
      out << fmt::format("{}; kept epoch {}\n", res.log.stop_reason, res.log.best_epoch);
      out << fmt::format("checkpoint written to {}\n", (opts.common.out / "checkpoint.bin").string());
    }
    return kOk;
  });
}

int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    const Checkpoint ck = load_checkpoint(opts.checkpoint);
    const Vocabulary vocab = Vocabulary::load(opts.vocab);
    if (ck.vocab_sha256 != vocab.hash())
      throw PreconditionError(fmt::format("vocabulary '{}' does not match checkpoint '{}'", opts.vocab.string(),
                                          opts.checkpoint.string()));
    const std::vector<Document> docs = load_documents(opts.data, err);
    json report;
    std::string table;
    if (opts.perplexity) {
      PerplexityOptions po;
      po.policy = cfg.masking.policy;
      po.eval_seed = cfg.eval.eval_seed;
      po.full_target = cfg.eval.full_target;
      po.batch_size = cfg.eval.batch_size;
      po.threads = default_thread_count();
      const PerplexityResult r = perplexity(ck.params, ck.config, docs, vocab, po);
      report = to_json(r);
      table = fmt::format("perplexity {:.4f} over {} targets ({}, eval seed {})\n", r.perplexity, r.targets,
                          r.full_target ? "every position" : "sampled masks", r.eval_seed);
    } else {
      const LabeledSequences data = encode_labeled(docs, vocab, ck.config.max_len);
      const std::vector<int> preds = predict(ck.params, ck.config, data.sequences, cfg.eval.batch_size, default_thread_count());
      const MetricsReport m = classification_metrics(preds, data.labels, cfg.eval.positive_label);
      report = to_json(m);
      table = format_table(m, opts.checkpoint.parent_path().filename().string());
    }
    report["checkpoint"] = opts.checkpoint.string();
    report["data"] = opts.data.string();
    atomic_write(opts.common.out / (opts.perplexity ? "perplexity.json" : "metrics.json"), report.dump(2) + "\n");
    out << (opts.common.format == OutputFormat::json ? report.dump(2) + "\n" : table);
    return kOk;
  });
}

int cmd_experiment(const ExperimentOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts.common);
    const ExperimentReport report = transfer_experiment(cfg.experiment_spec(), default_thread_count());
    atomic_write(opts.common.out / "experiment.json", to_json(report).dump(2) + "\n");
    out << (opts.common.format == OutputFormat::json ? to_json(report).dump(2) + "\n" : format_table(report));
    return kOk;
  });
}

int cmd_inspect(const InspectOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const CheckpointSummary s = inspect_checkpoint(opts.checkpoint);
    if (opts.common.format == OutputFormat::json) {
      json j = s.manifest;
      j["file_sha256"] = s.file_sha256;
      j["provenance_chain"] = s.provenance_chain;
      out << j.dump(2) << "\n";
    } else {
      out << format_summary(s);
    }
    return kOk;
  });
}

int cmd_config(const ConfigOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    out << dump_config(resolve_config(opts.common));
    return kOk;
  });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-condition transfer for stress detection: corpus, vocabulary, MLM pretraining, fine-tuning"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  BuildCorpusOptions corpus;
  auto* c_corpus = app.add_subcommand("build-corpus", "Filter, dedupe and split a condition-labeled corpus");
  add_common(*c_corpus, corpus.common);
  c_corpus->add_option("--input", corpus.input, "Input posts (.jsonl or .tsv)")->required();
  c_corpus->add_option("--rules", corpus.rules, "Self-report rule file (JSONL)");

  BuildVocabOptions vocab;
  auto* c_vocab = app.add_subcommand("build-vocab", "Build a word-level vocabulary");
  add_common(*c_vocab, vocab.common);
  c_vocab->add_option("--input", vocab.inputs, "Document files (.jsonl or .tsv)")->required();

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Write the synthetic pretraining corpus and task splits");
  add_common(*c_synth, synth.common);

  TrainOptions pre;
  auto* c_pre = app.add_subcommand("pretrain", "Masked-language-model training");
  add_common(*c_pre, pre.common);
  TrainOptions fine;
  auto* c_fine = app.add_subcommand("finetune", "Stress classification fine-tuning with early stopping");
  add_common(*c_fine, fine.common);
  for (auto [cmd, o] : {std::pair{c_pre, &pre}, std::pair{c_fine, &fine}}) {
    cmd->add_option("--train", o->train, "Training documents")->required();
    cmd->add_option("--valid", o->valid, "Validation documents")->required();
    cmd->add_option("--vocab", o->vocab, "Vocabulary file")->required();
    cmd->add_option("--init", o->init, "Start from this checkpoint");
  }
  c_pre->add_option("--dump-masks", pre.dump_masks, "Write the first N epoch-1 masked examples to masks.txt");

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Classification metrics or perplexity of a checkpoint");
  add_common(*c_eval, ev.common);
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--vocab", ev.vocab)->required();
  c_eval->add_option("--data", ev.data, "Documents to score")->required();
  c_eval->add_flag("--perplexity", ev.perplexity, "Report MLM perplexity instead of classification metrics");

  ExperimentOptions exp;
  auto* c_exp = app.add_subcommand("experiment", "Paired scratch vs pretrain-then-finetune comparison");
  add_common(*c_exp, exp.common);

  InspectOptions ins;
  auto* c_ins = app.add_subcommand("inspect", "Verify a checkpoint and print its manifest");
  add_common(*c_ins, ins.common, false);
  c_ins->add_option("checkpoint", ins.checkpoint)->required();

  ConfigOptions conf;
  auto* c_conf = app.add_subcommand("config", "Print the effective configuration");
  add_common(*c_conf, conf.common, false);

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (c_corpus->parsed()) return cmd_build_corpus(corpus, out, err);
  if (c_vocab->parsed()) return cmd_build_vocab(vocab, out, err);
  if (c_synth->parsed()) return cmd_synth(synth, out, err);
  if (c_pre->parsed()) return cmd_pretrain(pre, out, err);
  if (c_fine->parsed()) return cmd_finetune(fine, out, err);
  if (c_eval->parsed()) return cmd_eval(ev, out, err);
  if (c_exp->parsed()) return cmd_experiment(exp, out, err);
  if (c_ins->parsed()) return cmd_inspect(ins, out, err);
  if (c_conf->parsed()) return cmd_config(conf, out, err);
  return kUsage;
}

}  // namespace xcond::cli
