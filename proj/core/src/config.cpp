#include "xcond/config.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/io.hpp"
#include "xcond/parallel.hpp"

namespace xcond {

using nlohmann::json;

namespace {

const std::vector<std::string> kSections = {"corpus", "tokenizer", "masking", "model",
                                            "pretrain", "finetune", "eval", "experiment"};

std::string_view to_string(MaskGranularity g) { return g == MaskGranularity::per_epoch ? "per_epoch" : "per_step"; }

json train_section(const TrainRunConfig& r) {
  json j;
  j["epochs"] = r.epochs;
  j["batch_size"] = r.batch_size;
  j["lr"] = r.lr;
  j["weight_decay"] = r.weight_decay;
  j["beta1"] = r.beta1;
  j["beta2"] = r.beta2;
  j["epsilon"] = r.epsilon;
  j["seed"] = r.seed;
  j["eval_every"] = r.eval_every;
  j["grad_clip"] = r.grad_clip;
  j["valid_batch_size"] = r.valid_batch_size;
  j["eval_seed"] = r.eval_seed;
  if (r.stage == Stage::finetune) {
    j["patience"] = r.patience.value_or(0);
    j["stop_metric"] = std::string(to_string(r.stop_metric));
  }
  return j;
}

class SectionReader {
 public:
  SectionReader(const json& doc, std::string name, std::vector<std::string>& problems)
      : name_(std::move(name)), problems_(problems) {
    if (!doc.contains(name_)) return;
    const json& s = doc.at(name_);
    if (!s.is_object()) {
      problems_.push_back(fmt::format("{}: section must be an object", name_));
      return;
    }
    section_ = &s;
  }

  ~SectionReader() {
    if (!section_) return;
    for (const auto& [key, value] : section_->items())
      if (!known_.count(key)) problems_.push_back(fmt::format("{}.{}: unknown key", name_, key));
  }

  void size(const char* key, std::size_t& out) {
    read(key, "a non-negative integer", [&](const json& v) {
      if (!v.is_number_unsigned()) return false;
      out = v.get<std::size_t>();
      return true;
    });
  }
  void u64(const char* key, std::uint64_t& out) {
    read(key, "a non-negative integer", [&](const json& v) {
      if (!v.is_number_unsigned()) return false;
      out = v.get<std::uint64_t>();
      return true;
    });
  }
  void integer(const char* key, int& out) {
    read(key, "an integer", [&](const json& v) {
      if (!v.is_number_integer()) return false;
      out = v.get<int>();
      return true;
    });
  }
  void real(const char* key, double& out) {
    read(key, "a number", [&](const json& v) {
      if (!v.is_number()) return false;
      out = v.get<double>();
      return true;
    });
  }
  void boolean(const char* key, bool& out) {
    read(key, "a boolean", [&](const json& v) {
      if (!v.is_boolean()) return false;
      out = v.get<bool>();
      return true;
    });
  }
  void string(const char* key, std::string& out) {
    read(key, "a string", [&](const json& v) {
      if (!v.is_string()) return false;
      out = v.get<std::string>();
      return true;
    });
  }
  void u64_list(const char* key, std::vector<std::uint64_t>& out) {
    read(key, "an array of non-negative integers", [&](const json& v) {
      if (!v.is_array()) return false;
      std::vector<std::uint64_t> tmp;
      for (const json& e : v) {
        if (!e.is_number_unsigned()) return false;
        tmp.push_back(e.get<std::uint64_t>());
      }
      out = std::move(tmp);
      return true;
    });
  }
  void conditions(const char* key, std::vector<Condition>& out) {
    read(key, "an array of condition names", [&](const json& v) {
      if (!v.is_array()) return false;
      std::vector<Condition> tmp;
      for (const json& e : v) {
        if (!e.is_string()) return false;
        const auto c = parse_condition(e.get<std::string>());
        if (!c) return false;
        tmp.push_back(*c);
      }
      out = std::move(tmp);
      return true;
    });
  }
  void granularity(const char* key, MaskGranularity& out) {
    read(key, "\"per_epoch\" or \"per_step\"", [&](const json& v) {
      if (v == "per_epoch") out = MaskGranularity::per_epoch;
      else if (v == "per_step") out = MaskGranularity::per_step;
      else return false;
      return true;
    });
  }
  void stop_metric(const char* key, StopMetric& out) {
    read(key, "\"f1\" or \"loss\"", [&](const json& v) {
      if (v == "f1") out = StopMetric::f1;
      else if (v == "loss") out = StopMetric::loss;
      else return false;
      return true;
    });
  }

  /// Runs a validator, recording its failure under this section.
  void check(const std::function<void()>& validate) {
    try {
      validate();
    } catch (const Error& e) {
      problems_.push_back(fmt::format("{}: {}", name_, e.what()));
    }
  }

 private:
  void read(const char* key, const char* expected, const std::function<bool(const json&)>& assign) {
    known_.insert(key);
    if (!section_ || !section_->contains(key)) return;
    if (!assign(section_->at(key))) problems_.push_back(fmt::format("{}.{}: expected {}", name_, key, expected));
  }

  std::string name_;
  std::vector<std::string>& problems_;
  const json* section_ = nullptr;
  std::set<std::string> known_;
};

void read_train(SectionReader& r, TrainRunConfig& run) {
  r.size("epochs", run.epochs);
  r.size("batch_size", run.batch_size);
  r.real("lr", run.lr);
  r.real("weight_decay", run.weight_decay);
  r.real("beta1", run.beta1);
  r.real("beta2", run.beta2);
  r.real("epsilon", run.epsilon);
  r.u64("seed", run.seed);
  r.size("eval_every", run.eval_every);
  r.real("grad_clip", run.grad_clip);
  r.size("valid_batch_size", run.valid_batch_size);
  r.u64("eval_seed", run.eval_seed);
  if (run.stage == Stage::finetune) {
    std::size_t patience = run.patience.value_or(0);
    r.size("patience", patience);
    run.patience = patience;
    r.stop_metric("stop_metric", run.stop_metric);
  }
  r.check([&] { run.validate(); });
}

}  // namespace

TrainRunConfig RunConfig::pretrain_run() const {
  TrainRunConfig run = pretrain;
  run.mask_granularity = masking.granularity;
  run.threads = default_thread_count();
  return run;
}

TrainRunConfig RunConfig::finetune_run() const {
  TrainRunConfig run = finetune;
  run.threads = default_thread_count();
  return run;
}

ExperimentSpec RunConfig::experiment_spec() const {
  ExperimentSpec spec = builtin_benchmark(experiment.overlap_rate);
  spec.seeds = experiment.seeds;
  spec.pretrain_epochs = experiment.pretrain_epochs;
  spec.generator.n_pretrain_docs = experiment.n_pretrain_docs;
  spec.generator.n_task_docs = experiment.n_task_docs;
  spec.generator.seed = experiment.data_seed;
  spec.masking = masking.policy;
  spec.pretrain.mask_granularity = masking.granularity;
  return spec;
}

RunConfig default_config() { return RunConfig{}; }

json to_json(const TrainRunConfig& run) {
  json j = train_section(run);
  j["stage"] = std::string(to_string(run.stage));
  j["mask_granularity"] = std::string(to_string(run.mask_granularity));
  if (run.stage == Stage::pretrain && run.patience) j["patience"] = *run.patience;
  return j;
}

json to_json(const EncoderConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["max_len"] = c.max_len;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["d_ff"] = c.d_ff;
  j["dropout_rate"] = c.dropout_rate;
  j["layernorm_epsilon"] = c.layernorm_epsilon;
  j["n_classes"] = c.n_classes;
  return j;
}

EncoderConfig encoder_config_from_json(const json& j) {
  try {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.layernorm_epsilon = j.at("layernorm_epsilon").get<double>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("bad encoder config: {}", e.what()));
  }
}

json to_json(const RunConfig& c) {
  json j;
  json conditions = json::array();
  for (Condition cond : c.corpus.conditions) conditions.push_back(std::string(to_string(cond)));
  j["corpus"] = {{"conditions", conditions},
                 {"rules", c.corpus.rules},
                 {"match_self_report", c.corpus.match_self_report},
                 {"dedupe", c.corpus.dedupe},
                 {"valid_fraction", c.corpus.valid_fraction},
                 {"split_seed", c.corpus.split_seed}};
  j["tokenizer"] = {{"max_size", c.tokenizer.max_size}, {"min_freq", c.tokenizer.min_freq}};
  j["masking"] = {{"mask_rate", c.masking.policy.mask_rate},
                  {"p_mask", c.masking.policy.p_mask},
                  {"p_random", c.masking.policy.p_random},
                  {"p_keep", c.masking.policy.p_keep},
                  {"granularity", std::string(to_string(c.masking.granularity))}};
  json model = to_json(c.model);
  model.erase("vocab_size");
  model.erase("n_classes");
  j["model"] = model;
  j["pretrain"] = train_section(c.pretrain);
  j["finetune"] = train_section(c.finetune);
  j["eval"] = {{"eval_seed", c.eval.eval_seed},
               {"full_target", c.eval.full_target},
               {"batch_size", c.eval.batch_size},
               {"positive_label", c.eval.positive_label}};
  j["experiment"] = {{"overlap_rate", c.experiment.overlap_rate},
                     {"seeds", c.experiment.seeds},
                     {"pretrain_epochs", c.experiment.pretrain_epochs},
                     {"n_pretrain_docs", c.experiment.n_pretrain_docs},
                     {"n_task_docs", c.experiment.n_task_docs},
                     {"data_seed", c.experiment.data_seed}};
  return j;
}

std::string dump_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig parse_config(const json& doc) {
  std::vector<std::string> problems;
  RunConfig c;
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, value] : doc.items())
    if (std::find(kSections.begin(), kSections.end(), key) == kSections.end())
      problems.push_back(fmt::format("{}: unknown section", key));

  {
    SectionReader r(doc, "corpus", problems);
    r.conditions("conditions", c.corpus.conditions);
    r.string("rules", c.corpus.rules);
    r.boolean("match_self_report", c.corpus.match_self_report);
    r.boolean("dedupe", c.corpus.dedupe);
    r.real("valid_fraction", c.corpus.valid_fraction);
    r.u64("split_seed", c.corpus.split_seed);
    r.check([&] {
      require(!c.corpus.conditions.empty(), "conditions must not be empty");
      require(c.corpus.valid_fraction > 0.0 && c.corpus.valid_fraction < 1.0, "valid_fraction must lie in (0, 1)");
    });
  }
  {
    SectionReader r(doc, "tokenizer", problems);
    r.size("max_size", c.tokenizer.max_size);
    r.size("min_freq", c.tokenizer.min_freq);
    r.check([&] {
      require(c.tokenizer.max_size >= 5, "max_size must be at least 5");
      require(c.tokenizer.min_freq >= 1, "min_freq must be at least 1");
    });
  }
  {
    SectionReader r(doc, "masking", problems);
    r.real("mask_rate", c.masking.policy.mask_rate);
    r.real("p_mask", c.masking.policy.p_mask);
    r.real("p_random", c.masking.policy.p_random);
    r.real("p_keep", c.masking.policy.p_keep);
    r.granularity("granularity", c.masking.granularity);
    r.check([&] { c.masking.policy.validate(); });
  }
  {
    SectionReader r(doc, "model", problems);
    r.size("max_len", c.model.max_len);
    r.size("d_model", c.model.d_model);
    r.size("n_heads", c.model.n_heads);
    r.size("n_layers", c.model.n_layers);
    r.size("d_ff", c.model.d_ff);
    r.real("dropout_rate", c.model.dropout_rate);
    r.real("layernorm_epsilon", c.model.layernorm_epsilon);
    r.check([&] {
      EncoderConfig probe = c.model;
      probe.vocab_size = special::kCount + 1;
      probe.validate();
    });
  }
  {
    SectionReader r(doc, "pretrain", problems);
    read_train(r, c.pretrain);
  }
  {
    SectionReader r(doc, "finetune", problems);
    read_train(r, c.finetune);
  }
  {
    SectionReader r(doc, "eval", problems);
    r.u64("eval_seed", c.eval.eval_seed);
    r.boolean("full_target", c.eval.full_target);
    r.size("batch_size", c.eval.batch_size);
    r.integer("positive_label", c.eval.positive_label);
    r.check([&] {
      require(c.eval.batch_size >= 1, "batch_size must be at least 1");
      require(c.eval.positive_label == 0 || c.eval.positive_label == 1, "positive_label must be 0 or 1");
    });
  }
  {
    SectionReader r(doc, "experiment", problems);
    r.real("overlap_rate", c.experiment.overlap_rate);
    r.u64_list("seeds", c.experiment.seeds);
    r.size("pretrain_epochs", c.experiment.pretrain_epochs);
    r.size("n_pretrain_docs", c.experiment.n_pretrain_docs);
    r.size("n_task_docs", c.experiment.n_task_docs);
    r.u64("data_seed", c.experiment.data_seed);
    r.check([&] {
      require(c.experiment.overlap_rate >= 0.0 && c.experiment.overlap_rate <= 1.0, "overlap_rate must lie in [0, 1]");
      require(c.experiment.seeds.size() >= 2, "at least 2 seeds are required");
      require(c.experiment.n_pretrain_docs >= 2, "n_pretrain_docs must be at least 2");
      require(c.experiment.n_task_docs >= 10, "n_task_docs must be at least 10");
    });
  }

  if (!problems.empty()) {
    std::string msg = fmt::format("invalid config ({} problem{}):", problems.size(), problems.size() == 1 ? "" : "s");
    for (const std::string& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return c;
}

RunConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  return parse_config(doc);
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config_text(read_file(path)); }

void apply_seed_override(RunConfig& config, std::uint64_t seed) {
  config.pretrain.seed = seed;
  config.finetune.seed = seed;
  config.corpus.split_seed = seed;
  config.experiment.data_seed = seed;
}

}  // namespace xcond
