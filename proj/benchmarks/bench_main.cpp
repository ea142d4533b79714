#include <benchmark/benchmark.h>

#include <filesystem>

#include "prag/adapters.hpp"
#include "prag/augment.hpp"
#include "prag/pipeline.hpp"
#include "prag/retriever.hpp"
#include "prag/rng.hpp"
#include "prag/trainer.hpp"

namespace {

using namespace prag;

const ModelParams& desk_base() {
  static const ModelParams base = init_params(ModelConfig{}, 1);
  return base;
}

std::vector<TokenId> tokens(std::size_t n) {
  Rng rng(2);
  std::vector<TokenId> t{text::kBos};
  while (t.size() < n) t.push_back(static_cast<TokenId>('a' + rng.below(26)));
  return t;
}

LowRankAdapter trained_like(DocId id) {
  LowRankAdapter a = new_random(AdapterConfig{}, desk_base(), id, id.value);
  Rng rng(id.value);
  for (auto& l : a.layers) {
    for (Matrix* m : {&l.b_up, &l.b_down}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(0.01 * rng.normal());
    }
  }
  return a;
}

void BM_Forward(benchmark::State& state) {
  const auto t = tokens(static_cast<std::size_t>(state.range(0)));
  const EffectiveWeights w(desk_base());
  for (auto _ : state) benchmark::DoNotOptimize(forward(w, t));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_ForwardWithMergedDelta(benchmark::State& state) {
  const auto t = tokens(128);
  std::vector<LowRankAdapter> adapters;
  for (std::uint64_t i = 1; i <= 3; ++i) adapters.push_back(trained_like(DocId{i}));
  const auto w = prag::apply(desk_base(), std::make_shared<const MergedDelta>(merge(adapters)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(w, t));
}
BENCHMARK(BM_ForwardWithMergedDelta)->Unit(benchmark::kMillisecond);

void BM_GenerateGreedy(benchmark::State& state) {
  const auto prompt = tokens(64);
  const EffectiveWeights w(desk_base());
  for (auto _ : state) benchmark::DoNotOptimize(generate_greedy(w, prompt, 32));
}
BENCHMARK(BM_GenerateGreedy)->Unit(benchmark::kMillisecond);

void BM_Merge(benchmark::State& state) {
  std::vector<LowRankAdapter> adapters;
  for (std::int64_t i = 1; i <= state.range(0); ++i) {
    adapters.push_back(trained_like(DocId{static_cast<std::uint64_t>(i)}));
  }
  for (auto _ : state) benchmark::DoNotOptimize(merge(adapters));
}
BENCHMARK(BM_Merge)->Arg(1)->Arg(3)->Arg(6)->Unit(benchmark::kMicrosecond);

void BM_Bm25TopK(benchmark::State& state) {
  Rng rng(4);
  Corpus corpus;
  for (std::int64_t d = 0; d < state.range(0); ++d) {
    std::string text;
    for (int w = 0; w < 60; ++w) text += "w" + std::to_string(rng.below(5000)) + " ";
    corpus.add("d" + std::to_string(d), text);
  }
  const InvertedIndex index = InvertedIndex::build(corpus);
  std::vector<std::string> queries;
  for (int q = 0; q < 64; ++q) {
    queries.push_back("w" + std::to_string(rng.below(5000)) + " w" + std::to_string(rng.below(5000)) +
                      " w" + std::to_string(rng.below(5000)));
  }
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(index.top_k(queries[i++ % queries.size()], 3));
}
BENCHMARK(BM_Bm25TopK)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_TrainAdapter(benchmark::State& state) {
  const SyntheticCorpus world = gen_synthetic_corpus(1, 3, 5);
  RuleBasedAugmenter augmenter(1);
  const AugmentedDataset ds = build_dataset(world.corpus[0], 1, 3, augmenter);
  const LowRankAdapter init = new_random(AdapterConfig{}, desk_base(), world.corpus[0].id, 1);
  for (auto _ : state) benchmark::DoNotOptimize(train_adapter(desk_base(), ds, init, TrainHyper{}));
}
BENCHMARK(BM_TrainAdapter)->Unit(benchmark::kMillisecond);

void BM_AdapterSerialize(benchmark::State& state) {
  const auto a = trained_like(DocId{9});
  for (auto _ : state) benchmark::DoNotOptimize(deserialize(serialize(a)));
}
BENCHMARK(BM_AdapterSerialize)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
