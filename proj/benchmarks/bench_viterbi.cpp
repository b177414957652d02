#include <benchmark/benchmark.h>

#include "capplan/infer.hpp"
#include "capplan/random.hpp"

namespace {

using namespace capplan;

Matrix random_stochastic(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (auto& x : m.reshaped()) x = rng.uniform() + 1e-3;
  for (int r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
  return m;
}

void BM_Viterbi(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int t = static_cast<int>(state.range(1));
  Rng rng(1);
  const TransitionMatrix a(random_stochastic(rng, n, n));
  const Matrix b = random_stochastic(rng, t, n);
  for (auto _ : state) benchmark::DoNotOptimize(infer::viterbi_decode(a, b));
}
BENCHMARK(BM_Viterbi)->Args({12, 3})->Args({12, 6})->Args({100, 6})->Args({778, 4});

void BM_BruteForce(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int t = static_cast<int>(state.range(1));
  Rng rng(2);
  const TransitionMatrix a(random_stochastic(rng, n, n));
  const Matrix b = random_stochastic(rng, t, n);
  for (auto _ : state) benchmark::DoNotOptimize(infer::brute_force_decode(a, b));
}
BENCHMARK(BM_BruteForce)->Args({6, 5})->Args({12, 3});

void BM_EstimateTransition(benchmark::State& state) {
  Rng rng(3);
  std::vector<ActionSequence> plans(static_cast<std::size_t>(state.range(0)));
  for (auto& p : plans) {
    for (int s = 0; s < 3; ++s) p.push_back(static_cast<int>(rng.uniform_index(12)));
  }
  for (auto _ : state) benchmark::DoNotOptimize(infer::estimate_transition(plans, 12));
}
BENCHMARK(BM_EstimateTransition)->Arg(1500)->Arg(15000);

}  // namespace
