#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xcond/error.hpp"
#include "xcond/eval.hpp"

using namespace xcond;

namespace {

struct Oracle {
  double precision, recall, f1, accuracy;
};

// Definitions applied directly to the vectors.
Oracle brute_force(const std::vector<int>& pred, const std::vector<int>& gold, int pos) {
  double tp = 0, pp = 0, gp = 0, agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += (pred[i] == pos && gold[i] == pos);
    pp += (pred[i] == pos);
    gp += (gold[i] == pos);
    agree += (pred[i] == gold[i]);
  }
  Oracle o{};
  o.precision = pp > 0 ? tp / pp : 0.0;
  o.recall = gp > 0 ? tp / gp : 0.0;
  o.f1 = (pp + gp) > 0 ? 2 * tp / (pp + gp) : 0.0;
  o.accuracy = agree / pred.size();
  return o;
}

}  // namespace

TEST_CASE("metrics agree with the brute-force oracle") {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 50);
    const double p_gold = std::array<double, 4>{0.5, 0.05, 0.95, 0.0}[trial % 4];
    std::vector<int> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = uniform01(rng) < p_gold;
      pred[i] = uniform01(rng) < 0.5;
    }
    for (int pos : {0, 1}) {
      const MetricsReport r = classification_metrics(pred, gold, pos);
      const Oracle o = brute_force(pred, gold, pos);
      CHECK(r.precision == doctest::Approx(o.precision).epsilon(1e-12));
      CHECK(r.recall == doctest::Approx(o.recall).epsilon(1e-12));
      CHECK(r.f1 == doctest::Approx(o.f1).epsilon(1e-12));
      CHECK(r.accuracy == doctest::Approx(o.accuracy).epsilon(1e-12));
      CHECK(r.total() == n);
    }
  }
  CHECK(confusion_oracle_check(1000, 5));
}

TEST_CASE("undefined ratios are zero and flagged") {
  const MetricsReport r = classification_metrics({0, 0, 0}, {0, 0, 0});
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.precision_undefined);
  CHECK(r.recall_undefined);
  CHECK(classification_metrics({1}, {1}).f1 == 1.0);
}

TEST_CASE("f1 from precision and recall") {
  CHECK(std::abs(f1_score(0.8, 0.84) - 0.8195) <= 5e-4);
  CHECK(f1_score(0.0, 0.0) == 0.0);
  CHECK(f1_score(1.0, 1.0) == 1.0);
  const MetricsReport m = metrics_from_counts(3, 1, 5, 1);
  CHECK(m.precision == 0.75);
  CHECK(m.recall == 0.75);
  CHECK(m.accuracy == 0.8);
}

TEST_CASE("metric preconditions") {
  CHECK_THROWS_AS(classification_metrics({}, {}), PreconditionError);
  CHECK_THROWS_AS(classification_metrics({1}, {1, 0}), PreconditionError);
  CHECK_THROWS_AS(classification_metrics({2}, {1}), PreconditionError);
}

TEST_CASE("label distribution") {
  const DistributionReport a = distribution_from_counts(37, 63);
  CHECK(integer_percent(a.classes[0].share) == 37);
  CHECK(integer_percent(a.classes[1].share) == 63);
  CHECK(a.classes[0].label == 1);
  const DistributionReport task = distribution_from_counts(1092, 1844);
  CHECK(integer_percent(task.classes[0].share) == 37);
  CHECK(integer_percent(task.classes[1].share) == 63);
  CHECK(format_table(task).find("37%") != std::string::npos);

  const DistributionReport even = distribution_from_counts(50, 50);
  CHECK(even.classes[0].share == 0.5);

  const DistributionReport d = distribution_from_counts(1476, 1362);
  CHECK(d.total == 2838);
  CHECK(integer_percent(d.classes[0].share) == 52);

  std::vector<Document> docs(4);
  for (std::size_t i = 0; i < 4; ++i) {
    docs[i].text = "x";
    docs[i].stress_label = i == 0 ? StressLabel::positive : StressLabel::negative;
  }
  const DistributionReport r = label_distribution(docs);
  CHECK(r.classes[0].count == 1);
  CHECK(r.classes[1].count == 3);
  CHECK(format_table(r, "train").find("25%") != std::string::npos);
  docs[2].stress_label.reset();
  CHECK_THROWS_AS(label_distribution(docs), PreconditionError);
  CHECK_THROWS_AS(label_distribution({}), PreconditionError);
}

TEST_CASE("perplexity baselines") {
  EncoderConfig C;
  C.vocab_size = 40;
  C.max_len = 12;
  C.d_model = 8;
  C.n_layers = 1;
  C.d_ff = 16;
  const Vocabulary vocab = testing::numbered_vocab(40);
  Parameters P = init_params(C, 3);
  std::fill(P.token_embeddings.data.begin(), P.token_embeddings.data.end(), 0.0);
  std::fill(P.mlm_bias.data.begin(), P.mlm_bias.data.end(), 0.0);
  Rng rng(1);
  std::vector<TokenSequence> data;
  for (int i = 0; i < 30; ++i) data.push_back(testing::random_sequence(40, 8, 12, rng));

  const PerplexityResult u = perplexity(P, C, data, vocab);
  CHECK(std::abs(u.perplexity - 40.0) <= 1e-6);
  CHECK(u.targets > 0);
  PerplexityOptions full;
  full.full_target = true;
  const PerplexityResult uf = perplexity(P, C, data, vocab, full);
  CHECK(std::abs(uf.perplexity - 40.0) <= 1e-6);
  CHECK(uf.targets == 30 * 8);

  // A bias that puts all mass on the one content id the data uses.
  std::vector<TokenSequence> constant = data;
  for (auto& s : constant)
    for (std::size_t i = 1; i + 1 < s.original_length; ++i) s.ids[i] = 9;
  Parameters sharp = P;
  sharp.mlm_bias.data[9] = 80.0;
  CHECK(perplexity(sharp, C, constant, vocab, full).perplexity == doctest::Approx(1.0).epsilon(1e-9));

  const PerplexityResult again = perplexity(P, C, data, vocab);
  CHECK(again.targets == u.targets);
  CHECK(again.eval_seed == 20240517u);

  std::vector<TokenSequence> specials_only(1);
  specials_only[0].ids = {special::kBos, special::kEos};
  specials_only[0].attention = {true, true};
  specials_only[0].original_length = 2;
  CHECK_THROWS_AS(perplexity(P, C, specials_only, vocab), PreconditionError);
}
