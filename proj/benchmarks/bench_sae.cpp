#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "steerkit/sae.hpp"

using namespace steerkit;

namespace {

std::vector<float> random_vec(std::mt19937_64& g, std::size_t n) {
  std::vector<float> v(n);
  for (float& x : v) {
    x = float(double(g() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
  }
  return v;
}

SaeParams make_sae(std::uint32_t d, std::uint32_t m, std::uint32_t k) {
  std::mt19937_64 g(1);
  SaeParams sae;
  sae.input_dim = d;
  sae.n_features = m;
  sae.w_enc = random_vec(g, std::size_t(d) * m);
  sae.b_enc = random_vec(g, m);
  sae.w_dec = random_vec(g, std::size_t(m) * d);
  sae.b_dec = random_vec(g, d);
  sae.nonlinearity = NonlinearitySpec::topk(k);
  return sae;
}

void bench_encode(benchmark::State& state) {
  const std::uint32_t d = std::uint32_t(state.range(0));
  const std::uint32_t m = std::uint32_t(state.range(1));
  const SaeParams sae = make_sae(d, m, m / 16);
  std::mt19937_64 g(2);
  const std::vector<float> z = random_vec(g, d);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(sae, z));
  }
}
BENCHMARK(bench_encode)->Args({64, 512})->Args({64, 4096})->Args({256, 4096});

void bench_decode(benchmark::State& state) {
  const std::uint32_t d = std::uint32_t(state.range(0));
  const std::uint32_t m = std::uint32_t(state.range(1));
  const SaeParams sae = make_sae(d, m, m / 16);
  std::mt19937_64 g(3);
  const FeatureActivations a = encode(sae, random_vec(g, d));
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode(sae, a));
  }
}
BENCHMARK(bench_decode)->Args({64, 512})->Args({256, 4096});

}  // namespace

BENCHMARK_MAIN();
