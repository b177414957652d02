#pragma once

// Stochastic plan sampling, per-step marginals, first-order transition
// estimation and Viterbi decoding.

#include <cstdint>
#include <vector>

#include "capplan/core.hpp"
#include "capplan/model.hpp"

namespace capplan::infer {

struct SampledPlans {
  std::vector<ActionSequence> plans;  // K plans of length T
  int horizon = 0;
  std::uint64_t seed = 0;

  int count() const { return static_cast<int>(plans.size()); }
};

// Source of K plans for a window. The generator is one implementation; tests
// and baselines provide others.
class PlanSampler {
 public:
  virtual ~PlanSampler() = default;
  virtual SampledPlans sample(const PlanWindow& window, int count,
                              std::uint64_t seed) const = 0;
};

// z^k ~ N(0, I), one generator pass per draw, argmax per step (ties go to the
// lowest action index).
SampledPlans sample_plans(const model::ModelState& state, const PlanWindow& window,
                          int count, std::uint64_t seed);

// K x T x N logits for K noise draws (rows of `noise`), as a (K*T) x N matrix.
Matrix sample_logits(const model::ModelState& state, const PlanWindow& window,
                     const Matrix& noise);

class GeneratorSampler final : public PlanSampler {
 public:
  explicit GeneratorSampler(const model::ModelState& state) : state_(state) {}
  SampledPlans sample(const PlanWindow& window, int count,
                      std::uint64_t seed) const override {
    return sample_plans(state_, window, count, seed);
  }

 private:
  const model::ModelState& state_;
};

// Per-step action frequencies over the samples.
PlanDistribution marginal_distribution(const SampledPlans& samples, int vocab_size);

// Transition counts, row-wise L1 normalization (all-zero rows stay zero), then
// a row-wise softmax at temperature tau.
TransitionMatrix estimate_transition(const std::vector<ActionSequence>& plans,
                                     int vocab_size, double tau = 1.0);

// Scores within this distance (log space) count as ties; ties resolve to the
// lexicographically smallest path.
inline constexpr double kTieTolerance = 1e-9;

// Highest scoring path under log B[0][s0] + sum_t (log A[s_{t-1}][s_t] +
// log B[t][s_t]).
ActionSequence viterbi_decode(const TransitionMatrix& transitions,
                              const Matrix& emissions);
ActionSequence viterbi_decode(const TransitionMatrix& transitions,
                              const PlanDistribution& emissions);

// Exhaustive search with the same scoring and tie rule. N^T must be <= 1e6.
ActionSequence brute_force_decode(const TransitionMatrix& transitions,
                                  const Matrix& emissions);

// Path score used by both decoders, accumulated left to right.
double path_score(const Matrix& log_transitions, const Matrix& log_emissions,
                  const ActionSequence& path);

struct PlanResult {
  ActionSequence plan;
  PlanDistribution distribution;
  SampledPlans samples;
};

PlanResult plan(const PlanSampler& sampler, const PlanWindow& window, int count,
                const TransitionMatrix& transitions, std::uint64_t seed);
PlanResult plan(const model::ModelState& state, const PlanWindow& window, int count,
                const TransitionMatrix& transitions, std::uint64_t seed);

}  // namespace capplan::infer
