#include <benchmark/benchmark.h>

#include <random>

#include "unimixer/reference_mixers.hpp"
#include "unimixer/sinkhorn.hpp"
#include "unimixer/unimixing.hpp"

using namespace unimixer;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

MixingWeights random_weights(std::size_t length, std::size_t block) {
  UniMixingParams p;
  p.length = length;
  p.block = block;
  p.global_raw = random_matrix(length / block, length / block, 1);
  for (std::size_t i = 0; i < length / block; ++i) p.local_raw.push_back(random_matrix(block, block, 2 + i));
  return constrained_weights(p);
}

// Args: L, B.
void BM_UniMixingNaive(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0)), block = static_cast<std::size_t>(state.range(1));
  const MixingWeights w = random_weights(length, block);
  const Vector x = random_matrix(1, length, 9).data();
  for (auto _ : state) benchmark::DoNotOptimize(unimixing_naive(x, w));
}

void BM_UniMixingOptimized(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0)), block = static_cast<std::size_t>(state.range(1));
  const MixingWeights w = random_weights(length, block);
  const Vector x = random_matrix(1, length, 9).data();
  for (auto _ : state) benchmark::DoNotOptimize(unimixing_forward(x, w));
}

void BM_UniMixingBatch(benchmark::State& state) {
  const MixingWeights w = random_weights(768, 6);
  const Matrix xs = random_matrix(static_cast<std::size_t>(state.range(0)), 768, 9);
  for (auto _ : state) benchmark::DoNotOptimize(unimixing_forward_batch(xs, w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Sinkhorn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix w = symmetrize(random_matrix(n, n, 3));
  ConstraintConfig cfg;
  cfg.mode = SinkhornMode::kFixedDepth;
  cfg.max_iters = 20;
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn_knopp(w, cfg));
}

void BM_TokenMixer(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(t, 96, 4);
  const PermSpec spec{t, 96, t};
  for (auto _ : state) benchmark::DoNotOptimize(token_mixer(x, spec));
}

}  // namespace

BENCHMARK(BM_UniMixingNaive)->Args({96, 4})->Args({384, 6})->Args({768, 6});
BENCHMARK(BM_UniMixingOptimized)->Args({96, 4})->Args({384, 6})->Args({768, 6})->Args({768, 12});
BENCHMARK(BM_UniMixingBatch)->Arg(32)->Arg(256);
BENCHMARK(BM_Sinkhorn)->Arg(8)->Arg(32)->Arg(128);
BENCHMARK(BM_TokenMixer)->Arg(4)->Arg(8);
BENCHMARK_MAIN();
