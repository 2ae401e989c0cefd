#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "xcond/masking.hpp"
#include "xcond/model.hpp"
#include "xcond/optimizer.hpp"
#include "xcond/synthetic.hpp"
#include "xcond/tokenizer.hpp"

using namespace xcond;

namespace {

struct Fixture {
  Vocabulary vocab;
  EncoderConfig config;
  Parameters params;
  std::vector<TokenSequence> batch;
  std::vector<MaskedExample> masked;
  std::vector<int> labels;

  explicit Fixture(std::size_t batch_size) {
    GeneratorSpec g;
    g.n_pretrain_docs = 200;
    const std::vector<Document> docs = generate_pretrain_corpus(g);
    vocab = build_vocab(docs, 30000, 1);
    config.vocab_size = vocab.size();
    params = init_params(config, 1);
    for (std::size_t i = 0; i < batch_size; ++i) {
      batch.push_back(encode(docs[i].text, vocab, config.max_len));
      masked.push_back(apply_dynamic_mask(batch.back(), MaskingPolicy{}, vocab, i));
      labels.push_back(static_cast<int>(i % 2));
    }
  }
};

void BM_ForwardMlm(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_mlm(f.params, f.config, f.masked).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardMlm)->Arg(1)->Arg(16);

void BM_ForwardBackwardMlm(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const ForwardTrace t = forward_mlm(f.params, f.config, f.masked);
    benchmark::DoNotOptimize(backward(t, f.params));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackwardMlm)->Arg(1)->Arg(16);

void BM_ForwardBackwardClassify(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const ForwardTrace t = forward_classify(f.params, f.config, f.batch, f.labels);
    benchmark::DoNotOptimize(backward(t, f.params));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackwardClassify)->Arg(16);

void BM_AdamWStep(benchmark::State& state) {
  const Fixture f(1);
  Parameters p = f.params;
  const Gradients g = backward(forward_mlm(p, f.config, f.masked), p);
  OptimizerState st = OptimizerState::fresh(f.config, {});
  for (auto _ : state) adamw_step(p, g, st);
}
BENCHMARK(BM_AdamWStep);

void BM_RemaskEpoch(benchmark::State& state) {
  const Fixture f(64);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(remask_epoch(f.batch, MaskingPolicy{}, f.vocab, seed++));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_RemaskEpoch);

void BM_Encode(benchmark::State& state) {
  GeneratorSpec g;
  g.n_pretrain_docs = 500;
  const std::vector<Document> docs = generate_pretrain_corpus(g);
  const Vocabulary vocab = build_vocab(docs, 30000, 1);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(encode(docs[i++ % docs.size()].text, vocab, 64));
}
BENCHMARK(BM_Encode);

}  // namespace

BENCHMARK_MAIN();
