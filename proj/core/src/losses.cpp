#include "capplan/losses.hpp"

#include <cmath>

#include <fmt/format.h>

namespace capplan::train {

namespace {

using ad::Var;

void require_unit(const Vector& v, const char* what, std::size_t i, Eigen::Index dim) {
  if (v.size() != dim) {
    throw ShapeError(fmt::format("{}[{}] has dimension {}, expected {}", what, i,
                                 v.size(), dim));
  }
  if (std::abs(v.norm() - 1.0) > 1e-6) {
    throw DomainError(fmt::format("{}[{}] is not unit-norm (norm {})", what, i, v.norm()));
  }
}

Var mean_log(const Var& scores, bool complement) {
  // log C or log(1 - C), with C clamped away from {0, 1}.
  Var arg = complement ? ad::affine(scores, -1.0, 1.0) : scores;
  Var logs = ad::log_clamped(arg, kProbClamp, 1.0 - kProbClamp);
  return ad::scale(ad::sum(logs), 1.0 / static_cast<double>(scores.rows()));
}

Var score_sequences(ad::Tape& tape, model::ParamBinder& p,
                    const std::vector<Matrix>& sequences) {
  if (sequences.empty()) throw ShapeError("no sequences to score");
  const Eigen::Index horizon = sequences.front().rows();
  const Eigen::Index n = sequences.front().cols();
  Matrix stacked(horizon * static_cast<Eigen::Index>(sequences.size()), n);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].rows() != horizon || sequences[i].cols() != n) {
      throw ShapeError("sequences in one batch must share their shape");
    }
    stacked.middleRows(static_cast<Eigen::Index>(i) * horizon, horizon) = sequences[i];
  }
  return model::critic_forward(p, tape.constant(std::move(stacked)),
                               static_cast<int>(sequences.size()),
                               static_cast<int>(horizon));
}

}  // namespace

ContrastiveResult contrastive_loss(const std::vector<Vector>& context_tokens,
                                   const std::vector<Vector>& positives,
                                   const std::vector<Vector>& negatives) {
  if (context_tokens.size() != positives.size()) {
    throw ShapeError(fmt::format("{} context tokens but {} positives",
                                 context_tokens.size(), positives.size()));
  }
  if (context_tokens.empty()) return {};
  const Eigen::Index dim = context_tokens.front().size();
  for (std::size_t i = 0; i < context_tokens.size(); ++i) {
    require_unit(context_tokens[i], "context_tokens", i, dim);
    require_unit(positives[i], "positives", i, dim);
  }
  for (std::size_t i = 0; i < negatives.size(); ++i) require_unit(negatives[i], "negatives", i, dim);

  const auto r = static_cast<Eigen::Index>(context_tokens.size());
  const auto m = static_cast<Eigen::Index>(negatives.size());
  Matrix ctx(r, dim), cand(r + m, dim);
  for (Eigen::Index i = 0; i < r; ++i) {
    ctx.row(i) = context_tokens[static_cast<std::size_t>(i)].transpose();
    cand.row(i) = positives[static_cast<std::size_t>(i)].transpose();
  }
  for (Eigen::Index j = 0; j < m; ++j) cand.row(r + j) = negatives[static_cast<std::size_t>(j)].transpose();

  // Token i competes against its own positive and the shared negatives only.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(r, r + m, false);
  std::vector<Eigen::Index> targets;
  for (Eigen::Index i = 0; i < r; ++i) {
    mask(i, i) = true;
    mask.row(i).tail(m).setConstant(true);
    targets.push_back(i);
  }
  ad::Tape tape(false);
  Var logits = tape.constant(ctx * cand.transpose());
  const double value = ad::softmax_cross_entropy(logits, targets, mask).value()(0, 0);
  return ContrastiveResult{value, negatives.empty()};
}

Var contrastive_loss(const Var& context, const Var& candidates) {
  if (context.rows() != candidates.rows() || context.cols() != candidates.cols()) {
    throw ShapeError("contrastive loss: context and candidates must align row-wise");
  }
  std::vector<Eigen::Index> targets(static_cast<std::size_t>(context.rows()));
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<Eigen::Index>(i);
  return ad::softmax_cross_entropy(ad::matmul(context, ad::transpose(candidates)), targets);
}

double cross_entropy_loss(const Matrix& logits, const ActionSequence& gt) {
  if (logits.rows() != static_cast<Eigen::Index>(gt.size())) {
    throw ShapeError(fmt::format("cross entropy: {} logit rows for {} actions",
                                 logits.rows(), gt.size()));
  }
  ad::Tape tape(false);
  std::vector<Eigen::Index> targets(gt.begin(), gt.end());
  return cross_entropy_loss(tape.constant(logits), targets).value()(0, 0);
}

Var cross_entropy_loss(const Var& logits, const std::vector<Eigen::Index>& targets) {
  return ad::softmax_cross_entropy(logits, targets);
}

Var critic_loss(const Var& real_scores, const Var& fake_scores) {
  Var real_term = mean_log(real_scores, false);
  Var fake_term = mean_log(fake_scores, true);
  return ad::scale(ad::add(real_term, fake_term), -1.0);
}

Var generator_adv_loss(const Var& fake_scores) {
  return ad::scale(mean_log(fake_scores, false), -1.0);
}

double critic_loss(const model::ModelState& state,
                   const std::vector<Matrix>& real_sequences,
                   const std::vector<Matrix>& fake_sequences) {
  ad::Tape tape(false);
  model::ParamBinder p(tape, state);
  Var real = score_sequences(tape, p, real_sequences);
  Var fake = score_sequences(tape, p, fake_sequences);
  return critic_loss(real, fake).value()(0, 0);
}

double generator_adv_loss(const model::ModelState& state,
                          const std::vector<Matrix>& fake_sequences) {
  ad::Tape tape(false);
  model::ParamBinder p(tape, state);
  return generator_adv_loss(score_sequences(tape, p, fake_sequences)).value()(0, 0);
}

Matrix one_hot_rows(const std::vector<ActionSequence>& sequences, int vocab_size) {
  Eigen::Index rows = 0;
  for (const auto& s : sequences) rows += static_cast<Eigen::Index>(s.size());
  Matrix out = Matrix::Zero(rows, vocab_size);
  Eigen::Index r = 0;
  for (const auto& s : sequences) {
    for (ActionIndex a : s) out.row(r++) = one_hot(a, vocab_size).transpose();
  }
  return out;
}

}  // namespace capplan::train
