#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xcond/error.hpp"
#include "xcond/synthetic.hpp"
#include "xcond/training.hpp"

using namespace xcond;

namespace {

EncoderConfig desk_model(std::size_t vocab, std::size_t max_len) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.max_len = max_len;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 64;
  return c;
}

struct TaskFixture {
  Vocabulary vocab;
  TaskSplits splits;
  EncoderConfig config;
};

TaskFixture task_fixture() {
  GeneratorSpec g;
  g.n_task_docs = 150;
  g.overlap_rate = 0.0;
  TaskFixture f;
  f.splits = generate_task(g);
  std::vector<Document> all = f.splits.train;
  all.insert(all.end(), f.splits.valid.begin(), f.splits.valid.end());
  f.vocab = build_vocab(all, 1 << 20, 1);
  f.config = desk_model(f.vocab.size(), 24);
  return f;
}

TrainRunConfig quick_finetune() {
  TrainRunConfig r = TrainRunConfig::finetune_defaults();
  r.lr = 3e-3;
  r.epochs = 4;
  r.seed = 3;
  return r;
}

}  // namespace

TEST_CASE("stage defaults") {
  const TrainRunConfig p = TrainRunConfig::pretrain_defaults();
  CHECK(p.stage == Stage::pretrain);
  CHECK(p.lr == 2e-5);
  CHECK(p.batch_size == 16);
  CHECK(p.epochs == 5);
  CHECK(p.weight_decay == 0.01);
  CHECK(!p.patience);
  const TrainRunConfig f = TrainRunConfig::finetune_defaults();
  CHECK(f.stage == Stage::finetune);
  CHECK(f.lr == 2e-5);
  CHECK(f.batch_size == 16);
  CHECK(f.epochs == 6);
  CHECK(f.patience == 3u);
  CHECK(f.weight_decay == 0.01);

  TrainRunConfig bad = p;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), PreconditionError);
  bad = f;
  bad.patience.reset();
  CHECK_THROWS_AS(bad.validate(), PreconditionError);
}

TEST_CASE("early stopping replay") {
  const StoppingTrace t = replay_early_stopping({0.5, 0.6, 0.6, 0.6, 0.6}, 3, 6);
  CHECK(t.epochs_run == 5);
  CHECK(t.best_epoch == 2);
  CHECK(t.stop_reason == "no improvement for 3 epochs");

  const StoppingTrace up = replay_early_stopping({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}, 3, 6);
  CHECK(up.epochs_run == 6);
  CHECK(up.best_epoch == 6);
  CHECK(up.stop_reason == "epoch cap reached");

  const StoppingTrace loss = replay_early_stopping({1.0, 0.9, 0.95, 0.91, 0.92}, 3, 6, false);
  CHECK(loss.epochs_run == 5);
  CHECK(loss.best_epoch == 2);

  CHECK_THROWS_AS(replay_early_stopping({0.1}, 0, 6), PreconditionError);
}

TEST_CASE("early stopping counter") {
  EarlyStopping es(2);
  CHECK(es.update(0.0));  // the first epoch always sets the best
  CHECK(!es.update(0.0));
  CHECK(!es.should_stop());
  CHECK(!es.update(-1.0));
  CHECK(es.should_stop());
  CHECK(es.best_epoch() == 1);
  CHECK(es.epochs_seen() == 3);
}

TEST_CASE("pretraining lowers the loss and perplexity") {
  GeneratorSpec g;
  g.n_pretrain_docs = 200;
  const std::vector<Document> docs = generate_pretrain_corpus(g);
  const CorpusSplit split = dedupe_and_split(docs, 0.1, 5);
  const Vocabulary vocab = build_vocab(docs, 1 << 20, 1);
  const EncoderConfig C = desk_model(vocab.size(), 24);
  TrainRunConfig run = TrainRunConfig::pretrain_defaults();
  run.lr = 1e-3;
  run.seed = 11;
  std::size_t callbacks = 0;
  const TrainResult r = pretrain(split, vocab, C, run, {}, nullptr, [&](const EpochRecord&) { ++callbacks; });
  REQUIRE(r.log.epochs.size() == 5);
  CHECK(callbacks == 5);
  CHECK(r.log.epochs.back().train_loss < r.log.epochs.front().train_loss);
  CHECK(r.log.epochs.back().valid_metric < 0.5 * static_cast<double>(vocab.size()));
  CHECK(*r.log.initial_valid_metric > r.log.epochs.back().valid_metric);
  CHECK(r.log.stop_reason == "epoch cap reached");
  CHECK(r.optimizer.step == r.log.steps);
  CHECK(r.log.steps == 5 * ((split.train.size() + 15) / 16));
  for (const EpochRecord& e : r.log.epochs)
    CHECK(*e.train_perplexity == doctest::Approx(std::exp(e.train_loss)).epsilon(1e-12));
}

TEST_CASE("pretraining continues from given parameters") {
  GeneratorSpec g;
  g.n_pretrain_docs = 60;
  const std::vector<Document> docs = generate_pretrain_corpus(g);
  const CorpusSplit split = dedupe_and_split(docs, 0.2, 5);
  const Vocabulary vocab = build_vocab(docs, 1 << 20, 1);
  const EncoderConfig C = desk_model(vocab.size(), 24);
  TrainRunConfig run = TrainRunConfig::pretrain_defaults();
  run.epochs = 1;
  const Parameters init = testing::generic_params(C, 4, 0.05);
  const TrainResult a = pretrain(split, vocab, C, run, {}, &init);
  const TrainResult b = pretrain(split, vocab, C, run, {}, &init);
  const TrainResult c = pretrain(split, vocab, C, run);
  CHECK(a.params.token_embeddings == b.params.token_embeddings);
  CHECK(a.params.token_embeddings != c.params.token_embeddings);
  CHECK(a.log.to_jsonl(false) == b.log.to_jsonl(false));
}

TEST_CASE("fine-tuning keeps the best epoch and is deterministic") {
  const TaskFixture f = task_fixture();
  const Parameters init = init_params(f.config, 1);
  const TrainResult a = finetune(init, f.config, f.vocab, f.splits.train, f.splits.valid, quick_finetune());
  const TrainResult b = finetune(init, f.config, f.vocab, f.splits.train, f.splits.valid, quick_finetune());
  CHECK(a.log.to_jsonl(false) == b.log.to_jsonl(false));
  CHECK(a.params.classifier_weight == b.params.classifier_weight);

  REQUIRE(a.log.best_epoch >= 1);
  double best = -1;
  for (const EpochRecord& e : a.log.epochs) best = std::max(best, *e.valid_f1);
  REQUIRE(a.log.epochs[a.log.best_epoch - 1].valid_f1);
  CHECK(*a.log.epochs[a.log.best_epoch - 1].valid_f1 == best);

  const LabeledSequences valid = encode_labeled(f.splits.valid, f.vocab, f.config.max_len);
  const MetricsReport m = classification_metrics(predict(a.params, f.config, valid.sequences), valid.labels);
  CHECK(m.f1 >= best);
  CHECK(m.f1 == doctest::Approx(best).epsilon(1e-12));
  CHECK(a.optimizer.step <= a.log.steps);
}

TEST_CASE("fine-tuning preconditions") {
  const TaskFixture f = task_fixture();
  std::vector<Document> one_class;
  for (const Document& d : f.splits.train)
    if (d.stress_label == StressLabel::negative) one_class.push_back(d);
  const Parameters init = init_params(f.config, 1);
  CHECK_THROWS_AS(finetune(init, f.config, f.vocab, one_class, f.splits.valid, quick_finetune()), PreconditionError);

  std::vector<Document> unlabeled = f.splits.train;
  unlabeled[0].stress_label.reset();
  CHECK_THROWS_AS(encode_labeled(unlabeled, f.vocab, 24), PreconditionError);
}
