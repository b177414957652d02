#include "capplan/infer.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "capplan/random.hpp"

namespace capplan::infer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix safe_log(const Matrix& m) {
  return m.unaryExpr([](double x) { return x > 0.0 ? std::log(x) : kNegInf; });
}

void check_emissions(const TransitionMatrix& a, const Matrix& b) {
  if (b.rows() < 1 || b.cols() != a.size()) {
    throw ShapeError(fmt::format("emissions {}x{} do not match {} states", b.rows(),
                                 b.cols(), a.size()));
  }
  for (Eigen::Index t = 0; t < b.rows(); ++t) {
    if (!b.row(t).allFinite() || (b.row(t).array() < 0.0).any()) {
      throw DomainError(fmt::format("emissions at step {} must be finite and >= 0", t));
    }
    if (!(b.row(t).array() > 0.0).any()) {
      throw DomainError(fmt::format("degenerate emissions at step {}", t));
    }
  }
}

}  // namespace

Matrix sample_logits(const model::ModelState& state, const PlanWindow& window,
                     const Matrix& noise) {
  const auto& c = state.config;
  if (window.start_obs.size() != c.input_dim || window.goal_obs.size() != c.input_dim) {
    throw ShapeError(fmt::format("window observations have dimension {}/{}, model expects {}",
                                 window.start_obs.size(), window.goal_obs.size(),
                                 c.input_dim));
  }
  const Eigen::Index k = noise.rows();
  ad::Tape tape(false);
  model::ParamBinder p(tape, state);
  ad::Var start = tape.constant(window.start_obs.transpose());
  ad::Var goal = tape.constant(window.goal_obs.transpose());
  // Everything that does not depend on z is computed once and broadcast.
  std::vector<Eigen::Index> zeros(static_cast<std::size_t>(k), 0);
  ad::Var e_start = ad::gather_rows(model::observation_embedding(p, start), zeros);
  ad::Var e_goal = ad::gather_rows(model::observation_embedding(p, goal), zeros);
  ad::Var ctx;
  if (c.use_context) {
    ad::Var pair = model::context_tokens(p, start, goal);
    const ad::Var parts[] = {ad::gather_rows(pair, zeros),
                             ad::gather_rows(pair, std::vector<Eigen::Index>(zeros.size(), 1))};
    ctx = ad::concat_rows(parts);
  }
  const int batch = static_cast<int>(k);
  ad::Var q = model::queries(p, batch, window.horizon, e_start, e_goal,
                             tape.constant(noise));
  return model::decode(p, q, p("memory"), ctx, batch, window.horizon).value();
}

SampledPlans sample_plans(const model::ModelState& state, const PlanWindow& window,
                          int count, std::uint64_t seed) {
  if (count < 1) throw DomainError(fmt::format("sample count must be >= 1, got {}", count));
  Rng rng(derive_seed(seed, {0x6e6f697365ULL}));
  Matrix noise(count, state.config.noise_dim);
  for (Eigen::Index r = 0; r < noise.rows(); ++r) {
    for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = rng.normal();
  }
  const Matrix logits = sample_logits(state, window, noise);
  SampledPlans out;
  out.horizon = window.horizon;
  out.seed = seed;
  out.plans.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    ActionSequence plan(static_cast<std::size_t>(window.horizon));
    for (int t = 0; t < window.horizon; ++t) {
      Eigen::Index best = 0;
      // maxCoeff returns the first maximal index, i.e. the lowest action.
      logits.row(static_cast<Eigen::Index>(k) * window.horizon + t).maxCoeff(&best);
      plan[static_cast<std::size_t>(t)] = static_cast<ActionIndex>(best);
    }
    out.plans.push_back(std::move(plan));
  }
  return out;
}

PlanDistribution marginal_distribution(const SampledPlans& samples, int vocab_size) {
  if (samples.plans.empty()) throw DomainError("marginal distribution needs K >= 1");
  const int horizon = samples.horizon;
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(horizon, vocab_size);
  for (const auto& plan : samples.plans) {
    if (static_cast<int>(plan.size()) != horizon) {
      throw ShapeError("sampled plan length differs from horizon");
    }
    for (int t = 0; t < horizon; ++t) {
      const ActionIndex a = plan[static_cast<std::size_t>(t)];
      if (a < 0 || a >= vocab_size) {
        throw DomainError(fmt::format("sampled action {} outside N={}", a, vocab_size));
      }
      ++counts(t, a);
    }
  }
  Matrix probs = counts.cast<double>() / static_cast<double>(samples.plans.size());
  for (Eigen::Index t = 0; t < probs.rows(); ++t) probs.row(t) /= probs.row(t).sum();
  return PlanDistribution(std::move(probs));
}

TransitionMatrix estimate_transition(const std::vector<ActionSequence>& plans,
                                     int vocab_size, double tau) {
  if (!(tau > 0.0)) throw DomainError("transition temperature must be positive");
  Matrix counts = Matrix::Zero(vocab_size, vocab_size);
  long transitions = 0;
  for (const auto& plan : plans) {
    for (std::size_t t = 1; t < plan.size(); ++t) {
      const ActionIndex from = plan[t - 1], to = plan[t];
      if (from < 0 || from >= vocab_size || to < 0 || to >= vocab_size) {
        throw DomainError(fmt::format("action outside N={} in training plan", vocab_size));
      }
      counts(from, to) += 1.0;
      ++transitions;
    }
  }
  if (transitions == 0) throw DomainError("no transitions in training plans");
  Matrix probs(vocab_size, vocab_size);
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    const double l1 = counts.row(i).sum();
    Eigen::RowVectorXd row = l1 > 0.0 ? Eigen::RowVectorXd(counts.row(i) / l1)
                                      : Eigen::RowVectorXd::Zero(vocab_size);
    row /= tau;
    row = (row.array() - row.maxCoeff()).exp().matrix();
    probs.row(i) = row / row.sum();
  }
  return TransitionMatrix(std::move(probs));
}

double path_score(const Matrix& log_transitions, const Matrix& log_emissions,
                  const ActionSequence& path) {
  double score = log_emissions(0, path[0]);
  for (std::size_t t = 1; t < path.size(); ++t) {
    score += log_transitions(path[t - 1], path[t]);
    score += log_emissions(static_cast<Eigen::Index>(t), path[t]);
  }
  return score;
}

ActionSequence viterbi_decode(const TransitionMatrix& transitions, const Matrix& emissions) {
  check_emissions(transitions, emissions);
  const Matrix log_a = safe_log(transitions.probs());
  const Matrix log_b = safe_log(emissions);
  // Non-negative by construction; stated so the loops below are visibly bounded.
  const Eigen::Index horizon = std::max<Eigen::Index>(log_b.rows(), 0);
  const Eigen::Index n = log_b.cols();

  // best_suffix(t, s): best score of steps t+1..T-1 given state s at step t.
  Matrix best_suffix = Matrix::Zero(horizon, n);
  for (Eigen::Index t = horizon - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < n; ++s) {
      double best = kNegInf;
      for (Eigen::Index u = 0; u < n; ++u) {
        best = std::max(best, log_a(s, u) + log_b(t + 1, u) + best_suffix(t + 1, u));
      }
      best_suffix(t, s) = best;
    }
  }
  double optimum = kNegInf;
  for (Eigen::Index s = 0; s < n; ++s) optimum = std::max(optimum, log_b(0, s) + best_suffix(0, s));

  // Walk forward choosing the smallest state that can still reach the optimum,
  // which yields the lexicographically smallest optimal path.
  ActionSequence path;
  double prefix = 0.0;
  for (Eigen::Index t = 0; t < horizon; ++t) {
    for (Eigen::Index s = 0; s < n; ++s) {
      const double step = t == 0 ? log_b(0, s) : log_a(path.back(), s) + log_b(t, s);
      if (prefix + step + best_suffix(t, s) >= optimum - kTieTolerance) {
        path.push_back(static_cast<ActionIndex>(s));
        prefix += step;
        break;
      }
    }
  }
  return path;
}

ActionSequence viterbi_decode(const TransitionMatrix& transitions,
                              const PlanDistribution& emissions) {
  return viterbi_decode(transitions, emissions.probs());
}

ActionSequence brute_force_decode(const TransitionMatrix& transitions,
                                  const Matrix& emissions) {
  check_emissions(transitions, emissions);
  const Eigen::Index horizon = emissions.rows();
  const Eigen::Index n = emissions.cols();
  double total = 1.0;
  for (Eigen::Index t = 0; t < horizon; ++t) total *= static_cast<double>(n);
  if (total > 1e6) {
    throw DomainError(fmt::format("brute force over {}^{} paths is too large", n, horizon));
  }
  const Matrix log_a = safe_log(transitions.probs());
  const Matrix log_b = safe_log(emissions);

  std::vector<std::pair<double, ActionSequence>> scored;
  ActionSequence path(static_cast<std::size_t>(horizon), 0);
  // Odometer enumeration in lexicographic order.
  while (true) {
    scored.emplace_back(path_score(log_a, log_b, path), path);
    Eigen::Index pos = horizon - 1;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == n - 1) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  double best = kNegInf;
  for (const auto& [score, _] : scored) best = std::max(best, score);
  for (const auto& [score, p] : scored) {
    if (score >= best - kTieTolerance) return p;
  }
  return scored.front().second;
}

PlanResult plan(const PlanSampler& sampler, const PlanWindow& window, int count,
                const TransitionMatrix& transitions, std::uint64_t seed) {
  SampledPlans samples = sampler.sample(window, count, seed);
  PlanDistribution dist = marginal_distribution(samples, transitions.size());
  ActionSequence decoded = viterbi_decode(transitions, dist);
  return PlanResult{std::move(decoded), std::move(dist), std::move(samples)};
}

PlanResult plan(const model::ModelState& state, const PlanWindow& window, int count,
                const TransitionMatrix& transitions, std::uint64_t seed) {
  return plan(GeneratorSampler(state), window, count, transitions, seed);
}

}  // namespace capplan::infer
