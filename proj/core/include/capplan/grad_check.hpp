#pragma once

// Finite-difference verification of the analytic gradients of every loss.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capplan/model.hpp"
#include "capplan/trainer.hpp"

namespace capplan::train {

// Scales one analytic gradient entry before comparison, to prove that the
// check notices a wrong gradient.
struct GradFault {
  LossTerm term = LossTerm::CrossEntropy;
  // Empty picks the entry with the largest analytic magnitude.
  std::string param;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double factor = 1.01;
};

struct TermCheck {
  LossTerm term = LossTerm::CrossEntropy;
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  std::size_t entries = 0;
};

struct GradCheckResult {
  std::vector<TermCheck> terms;
  double max_rel_error = 0.0;
};

// Compares analytic gradients against central differences
// (f(w + eps) - f(w - eps)) / (2 eps) for every entry of every parameter. The
// relative error of one entry is |a - n| / max(1e-8, |a| + |n|). The critic
// loss is checked over critic parameters only (generator outputs are detached
// there); the other terms over all parameters.
GradCheckResult grad_check(const model::ModelState& state, std::span<const PlanWindow> batch,
                           std::uint64_t seed, double epsilon = 1e-5,
                           std::span<const LossTerm> terms = {},
                           const std::optional<GradFault>& fault = std::nullopt);

// The small configuration used for gradient verification.
model::GeneratorConfig tiny_config();

}  // namespace capplan::train
