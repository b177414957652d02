#pragma once

// The three training objectives: caption contrastive loss, per-step action
// cross-entropy, and the critic/generator adversarial pair.
//
// Each loss exists as a tape op (used by training and gradient checks) and as
// a plain function on values.

#include <vector>

#include "capplan/autodiff.hpp"
#include "capplan/core.hpp"
#include "capplan/model.hpp"

namespace capplan::train {

// Critic outputs are clamped to [kProbClamp, 1 - kProbClamp] inside logs.
inline constexpr double kProbClamp = 1e-7;

struct ContrastiveResult {
  double value = 0.0;
  // Set when the negative pool was empty, in which case the loss is
  // identically zero and carries no training signal.
  bool empty_negative_pool = false;
};

// For each token t: -log( exp(pos_t . cxt_t) /
//                         (exp(pos_t . cxt_t) + sum_j exp(neg_j . cxt_t)) ),
// summed over tokens. Every vector must be unit-norm (tolerance 1e-6).
ContrastiveResult contrastive_loss(const std::vector<Vector>& context_tokens,
                                   const std::vector<Vector>& positives,
                                   const std::vector<Vector>& negatives);

// Batch form: row r of context is scored against every row of candidates;
// candidate r is its positive and all other candidates are negatives.
ad::Var contrastive_loss(const ad::Var& context, const ad::Var& candidates);

// Sum over steps of -log softmax(logits_t)[gt_t].
double cross_entropy_loss(const Matrix& logits, const ActionSequence& gt);
ad::Var cross_entropy_loss(const ad::Var& logits, const std::vector<Eigen::Index>& targets);

// -mean log C(real) - mean log(1 - C(fake)), scores given as column vectors.
ad::Var critic_loss(const ad::Var& real_scores, const ad::Var& fake_scores);
// -mean log C(fake).
ad::Var generator_adv_loss(const ad::Var& fake_scores);

// Value-level forms scoring T x N sequences with the state's critic.
double critic_loss(const model::ModelState& state,
                   const std::vector<Matrix>& real_sequences,
                   const std::vector<Matrix>& fake_sequences);
double generator_adv_loss(const model::ModelState& state,
                          const std::vector<Matrix>& fake_sequences);

// One-hot rows for a batch of action sequences, (B*T) x N.
Matrix one_hot_rows(const std::vector<ActionSequence>& sequences, int vocab_size);

}  // namespace capplan::train
