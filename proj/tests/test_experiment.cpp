#include <doctest.h>

#include "xcond/error.hpp"
#include "xcond/experiment.hpp"

using namespace xcond;

namespace {

ExperimentSpec small_spec() {
  ExperimentSpec s = builtin_benchmark(0.8);
  s.generator.n_pretrain_docs = 120;
  s.generator.n_task_docs = 100;
  s.seeds = {1, 2};
  s.pretrain_epochs = 1;
  s.finetune.epochs = 2;
  s.model.d_model = 16;
  s.model.d_ff = 32;
  s.model.n_layers = 1;
  return s;
}

}  // namespace

TEST_CASE("builtin benchmark settings") {
  const ExperimentSpec s = builtin_benchmark(0.3);
  CHECK(s.generator.overlap_rate == 0.3);
  CHECK(s.seeds.size() == 5);
  CHECK(s.finetune.patience == 3u);
  CHECK(s.finetune.epochs == 6);
  CHECK(s.pretrain_epochs == 5);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("needs at least two seeds") {
  ExperimentSpec s = small_spec();
  s.seeds = {1};
  CHECK_THROWS_AS(transfer_experiment(s), PreconditionError);
}

TEST_CASE("without pretraining the arms coincide") {
  ExperimentSpec s = small_spec();
  s.pretrain_epochs = 0;
  const ExperimentReport r = transfer_experiment(s);
  REQUIRE(r.seeds.size() == 2);
  for (const SeedOutcome& o : r.seeds) {
    CHECK(o.difference() == 0.0);
    CHECK(o.scratch == o.pretrained);
    CHECK(!o.pretrain_valid_perplexity);
  }
  CHECK(r.ties == 2);
  CHECK(r.mean_difference == 0.0);
}

TEST_CASE("report lists every seed and aggregates them") {
  const ExperimentSpec s = small_spec();
  const ExperimentReport r = transfer_experiment(s);
  REQUIRE(r.seeds.size() == 2);
  double sum_s = 0, sum_p = 0;
  for (const SeedOutcome& o : r.seeds) {
    sum_s += o.scratch.f1;
    sum_p += o.pretrained.f1;
    CHECK(o.pretrain_valid_perplexity);
    CHECK(o.scratch.total() == o.pretrained.total());
  }
  CHECK(r.mean_f1_scratch == doctest::Approx(sum_s / 2));
  CHECK(r.mean_f1_pretrained == doctest::Approx(sum_p / 2));
  CHECK(r.wins + r.losses + r.ties == 2);

  const nlohmann::json j = to_json(r);
  CHECK(j["seeds"].size() == 2);
  CHECK(j["seeds"][1]["seed"] == 2);
  const std::string table = format_table(r);
  CHECK(table.find("mean") != std::string::npos);
  CHECK(table.find("overlap_rate 0.80") != std::string::npos);

  const ExperimentReport again = transfer_experiment(s, 2);
  CHECK(to_json(again).dump() == j.dump());
}
