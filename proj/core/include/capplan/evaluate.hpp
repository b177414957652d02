#pragma once

// Test-set evaluation: decode every window, pool samples per
// (task, start state, goal state) group, and aggregate one MetricReport per
// horizon.

#include <cstdint>
#include <span>
#include <vector>

#include "capplan/core.hpp"
#include "capplan/infer.hpp"
#include "capplan/metrics.hpp"
#include "capplan/world.hpp"

namespace capplan::metrics {

// Emits each window's ground truth plan for every sample.
class OracleSampler final : public infer::PlanSampler {
 public:
  infer::SampledPlans sample(const PlanWindow& window, int count,
                             std::uint64_t seed) const override;
};

// Uniformly random actions at every step.
class UniformSampler final : public infer::PlanSampler {
 public:
  explicit UniformSampler(int vocab_size) : vocab_size_(vocab_size) {}
  infer::SampledPlans sample(const PlanWindow& window, int count,
                             std::uint64_t seed) const override;

 private:
  int vocab_size_;
};

// Seed used for one window: a function of the evaluation seed and the
// window's contents, so results do not depend on the order of the test set.
std::uint64_t window_seed(std::uint64_t seed, const PlanWindow& window);

// Windows with task and state annotations are grouped by them; any other
// window forms its own group. With a world, the exact plan distribution
// replaces the empirical one as ground truth.
std::vector<EvalGroup> build_groups(std::span<const PlanWindow> windows,
                                    const world::World* world);

struct EvaluateOptions {
  int samples = 1500;
  std::uint64_t seed = 0;
  // Empty means every horizon present in the test windows.
  std::vector<int> horizons;
  const world::World* world = nullptr;
};

std::vector<MetricReport> evaluate(const infer::PlanSampler& sampler,
                                   std::span<const PlanWindow> test,
                                   const TransitionMatrix& transitions,
                                   const EvaluateOptions& options);

}  // namespace capplan::metrics
