#include <doctest.h>

#include <set>

#include "xcond/error.hpp"
#include "xcond/eval.hpp"
#include "xcond/synthetic.hpp"
#include "xcond/tokenizer.hpp"

using namespace xcond;

namespace {

bool has_any(const std::string& text, const std::set<std::string>& words) {
  for (const std::string& w : pretokenize(text))
    if (words.count(w)) return true;
  return false;
}

std::vector<Document> all_task(const TaskSplits& s) {
  std::vector<Document> out = s.train;
  out.insert(out.end(), s.valid.begin(), s.valid.end());
  out.insert(out.end(), s.test.begin(), s.test.end());
  return out;
}

}  // namespace

TEST_CASE("pretraining corpus follows the condition shares") {
  GeneratorSpec g;
  g.n_pretrain_docs = 3000;
  const CompositionReport r = compute_composition(generate_pretrain_corpus(g));
  CHECK(std::abs(r.find(Condition::depression)->token_share - 0.53) <= 0.01);
  CHECK(std::abs(r.find(Condition::anxiety)->token_share - 0.34) <= 0.01);
  CHECK(std::abs(r.find(Condition::ptsd)->token_share - 0.13) <= 0.01);

  g.n_pretrain_docs = 0;
  CHECK(generate_pretrain_corpus(g).empty());
}

TEST_CASE("generation is deterministic in the seed") {
  GeneratorSpec g;
  g.n_pretrain_docs = 100;
  g.n_task_docs = 100;
  CHECK(to_jsonl(generate_pretrain_corpus(g)) == to_jsonl(generate_pretrain_corpus(g)));
  CHECK(to_jsonl(generate_task(g).test) == to_jsonl(generate_task(g).test));
  GeneratorSpec h = g;
  h.seed = 8;
  CHECK(to_jsonl(generate_pretrain_corpus(g)) != to_jsonl(generate_pretrain_corpus(h)));
}

TEST_CASE("task splits keep the class ratio") {
  GeneratorSpec g;
  g.n_task_docs = 1000;
  const TaskSplits s = generate_task(g);
  CHECK(s.train.size() == 600);
  CHECK(s.valid.size() == 200);
  CHECK(s.test.size() == 200);
  for (const auto* split : {&s.train, &s.valid, &s.test}) {
    const DistributionReport d = label_distribution(*split);
    CHECK(std::abs(d.classes[0].share - 0.37) <= 0.01);
  }
  const DistributionReport all = label_distribution(all_task(s));
  CHECK(integer_percent(all.classes[0].share) == 37);
  CHECK(integer_percent(all.classes[1].share) == 63);
}

TEST_CASE("overlap controls which markers positives carry") {
  GeneratorSpec g;
  g.n_task_docs = 300;
  const SyntheticLexicon lex = make_lexicon(g);
  const std::vector<std::string> cm = lex.all_condition_markers();
  const std::set<std::string> condition_markers(cm.begin(), cm.end());
  const std::set<std::string> task_markers(lex.task_markers.begin(), lex.task_markers.end());

  g.overlap_rate = 0.0;
  for (const Document& d : all_task(generate_task(g))) {
    if (d.stress_label == StressLabel::positive) {
      CHECK(!has_any(d.text, condition_markers));
      CHECK(has_any(d.text, task_markers));
    } else {
      CHECK(!has_any(d.text, condition_markers));
      CHECK(!has_any(d.text, task_markers));
    }
  }
  g.overlap_rate = 1.0;
  for (const Document& d : all_task(generate_task(g)))
    if (d.stress_label == StressLabel::positive) CHECK(has_any(d.text, condition_markers));
}

TEST_CASE("every generated word is in the closed vocabulary") {
  GeneratorSpec g;
  g.n_pretrain_docs = 500;
  g.n_task_docs = 200;
  const SyntheticLexicon lex = make_lexicon(g);
  const Vocabulary vocab(lex.closed_vocabulary());
  std::vector<Document> docs = generate_pretrain_corpus(g);
  const std::vector<Document> task = all_task(generate_task(g));
  docs.insert(docs.end(), task.begin(), task.end());
  std::size_t unk = 0;
  for (const Document& d : docs)
    for (TokenId id : encode(d.text, vocab, 64).ids) unk += (id == special::kUnk);
  CHECK(unk == 0);

  const std::vector<std::string> closed = lex.closed_vocabulary();
  CHECK(std::set<std::string>(closed.begin(), closed.end()).size() == closed.size());
}

TEST_CASE("generator settings validation") {
  GeneratorSpec g;
  g.overlap_rate = 1.5;
  CHECK_THROWS_AS(g.validate(), PreconditionError);
  g = GeneratorSpec{};
  g.condition_shares = {0.5, -0.1, 0.6};
  CHECK_THROWS_AS(g.validate(), PreconditionError);
  g = GeneratorSpec{};
  g.train_fraction = 0.9;
  g.valid_fraction = 0.2;
  CHECK_THROWS_AS(g.validate(), PreconditionError);
}
