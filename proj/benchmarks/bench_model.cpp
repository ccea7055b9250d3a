#include <benchmark/benchmark.h>

#include <vector>

#include "steerkit/model.hpp"

using namespace steerkit;

namespace {

void bench_forward(benchmark::State& state) {
  const std::uint32_t d = std::uint32_t(state.range(0));
  const std::uint32_t layers = std::uint32_t(state.range(1));
  const ModelParams model = random_model(260, d, layers, d / 16, 128, 1);
  std::vector<std::uint32_t> ids(64);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = std::uint32_t(i % 256);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_capture(model, ids, layers / 2));
  }
}
BENCHMARK(bench_forward)->Args({32, 2})->Args({64, 4});

void bench_generate(benchmark::State& state) {
  const ModelParams model = random_model(260, 32, 2, 2, 128, 2);
  const std::vector<std::uint32_t> prompt = tokenize_bytes("Question: why?\nAnswer:");
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_steered(model, prompt, std::nullopt, 16));
  }
}
BENCHMARK(bench_generate);

}  // namespace

BENCHMARK_MAIN();
