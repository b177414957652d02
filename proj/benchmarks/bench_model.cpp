#include <benchmark/benchmark.h>

#include "capplan/infer.hpp"
#include "capplan/model.hpp"
#include "capplan/random.hpp"

namespace {

using namespace capplan;

PlanWindow random_window(const model::GeneratorConfig& config, int horizon) {
  Rng rng(7);
  auto vec = [&] {
    Vector v(config.input_dim);
    for (auto& x : v) x = rng.normal();
    return v;
  };
  PlanWindow w;
  w.start_obs = vec();
  w.goal_obs = vec();
  w.start_caption_emb = vec();
  w.goal_caption_emb = vec();
  w.horizon = horizon;
  w.actions.assign(static_cast<std::size_t>(horizon), 0);
  w.source_video_id = "bench";
  return w;
}

// One batched generator pass producing K plans for a default-sized model.
void BM_SamplePlans(benchmark::State& state) {
  const model::GeneratorConfig config;
  const model::ModelState model = model::init_parameters(config, 1);
  const PlanWindow w = random_window(config, 3);
  const int k = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(infer::sample_plans(model, w, k, ++seed));
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_SamplePlans)->Arg(1)->Arg(16)->Arg(1500)->Unit(benchmark::kMillisecond);

void BM_DecoderForward(benchmark::State& state) {
  const model::GeneratorConfig config;
  const model::ModelState model = model::init_parameters(config, 1);
  const PlanWindow w = random_window(config, static_cast<int>(state.range(0)));
  const Vector vs = model::embed_observation(model, w.start_obs);
  const Vector vg = model::embed_observation(model, w.goal_obs);
  const auto context = model::compute_context(model, w.start_obs, w.goal_obs);
  const Matrix q = model::build_queries(model, w.horizon, vs, vg, Vector::Zero(config.noise_dim));
  const Matrix& memory = model.params.at("memory");
  for (auto _ : state) benchmark::DoNotOptimize(model::decoder_forward(model, q, memory, context));
}
BENCHMARK(BM_DecoderForward)->Arg(3)->Arg(6);

}  // namespace
