#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "steerkit/retrieval.hpp"

using namespace steerkit;

namespace {

EmbeddingStore make_store(std::uint32_t dim, FeatureIndex n) {
  std::mt19937_64 g(1);
  EmbeddingStore store;
  store.dim = dim;
  store.embedder_id = "bench";
  for (FeatureIndex c = 0; c < n; ++c) {
    std::vector<float> v(dim);
    for (float& x : v) {
      x = float(double(g() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    }
    v[0] += 2.0f;
    store.vectors[c] = v;
  }
  return store;
}

void bench_usefulness(benchmark::State& state) {
  const FeatureIndex n = FeatureIndex(state.range(0));
  const EmbeddingStore store = make_store(256, n);
  FeatureSet relevant, noise, candidates;
  for (FeatureIndex c = 0; c < 20; ++c) {
    relevant.insert(c);
  }
  for (FeatureIndex c = 20; c < 120; ++c) {
    noise.insert(c);
  }
  for (FeatureIndex c = 120; c < n; ++c) {
    candidates.insert(c);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(usefulness_scores(store, relevant, noise, candidates));
  }
}
BENCHMARK(bench_usefulness)->Arg(512)->Arg(4096);

void bench_hash_embed(benchmark::State& state) {
  HashEmbedder embedder(256);
  const std::string text =
      "statements that flatter the user and agree with their stated position";
  for (auto _ : state) {
    benchmark::DoNotOptimize(embedder.embed(text));
  }
}
BENCHMARK(bench_hash_embed);

}  // namespace

BENCHMARK_MAIN();
