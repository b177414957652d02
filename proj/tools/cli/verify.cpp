#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "capplan/evaluate.hpp"
#include "capplan/grad_check.hpp"
#include "capplan/infer.hpp"
#include "capplan/metrics.hpp"
#include "capplan/random.hpp"
#include "cli/commands.hpp"

namespace capplan::cli {

namespace {

Matrix random_stochastic(Rng& rng, int rows, int cols, bool strictly_positive, bool coarse) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      // Coarse values make exact score ties common.
      double v = coarse ? static_cast<double>(rng.uniform_index(3)) : rng.uniform();
      if (strictly_positive) v += coarse ? 1.0 : 1e-3;
      m(r, c) = v;
    }
    if (m.row(r).sum() == 0.0) m(r, static_cast<Eigen::Index>(rng.uniform_index(cols))) = 1.0;
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

CheckOutcome check_viterbi(const RunConfig& config) {
  const int trials = config.get_int("verify.viterbi_trials");
  Rng rng(derive_seed(config.get_u64("seed"), {0x76697465ULL}));
  for (int i = 0; i < trials; ++i) {
    const int n = 2 + static_cast<int>(rng.uniform_index(5));
    const int t = 2 + static_cast<int>(rng.uniform_index(4));
    const bool coarse = i % 2 == 1;
    const TransitionMatrix a(random_stochastic(rng, n, n, true, coarse));
    const Matrix b = random_stochastic(rng, t, n, false, coarse);
    const auto v = infer::viterbi_decode(a, b);
    const auto bf = infer::brute_force_decode(a, b);
    if (v != bf) {
      return {"viterbi-vs-brute-force", false,
              fmt::format("trial {} (N={}, T={}) disagrees", i, n, t)};
    }
  }
  return {"viterbi-vs-brute-force", true, fmt::format("{} random instances agree", trials)};
}

CheckOutcome check_gradients(const RunConfig& config, bool inject_fault) {
  const model::GeneratorConfig mc = train::tiny_config();
  const std::uint64_t seed = derive_seed(config.get_u64("seed"), {0x67726164ULL});
  const model::ModelState state = model::init_parameters(mc, seed);
  Rng rng(seed);
  std::vector<PlanWindow> batch(3);
  for (auto& w : batch) {
    auto vec = [&rng, &mc] {
      Vector v(mc.input_dim);
      for (auto& x : v) x = rng.normal();
      return v;
    };
    w.start_obs = vec();
    w.goal_obs = vec();
    w.start_caption_emb = vec();
    w.goal_caption_emb = vec();
    w.horizon = mc.max_horizon;
    for (int s = 0; s < w.horizon; ++s) {
      w.actions.push_back(static_cast<ActionIndex>(rng.uniform_index(mc.vocab_size)));
    }
    w.source_video_id = "grad";
  }
  std::optional<train::GradFault> fault;
  if (inject_fault) fault = train::GradFault{};
  const auto result = train::grad_check(state, batch, seed, 1e-5, {}, fault);
  for (const auto& t : result.terms) {
    if (t.max_rel_error > 1e-4) {
      return {fmt::format("gradient/{}", train::to_string(t.term)), false,
              fmt::format("max relative error {:.3e} at {}({},{})", t.max_rel_error,
                          t.worst_param, t.worst_row, t.worst_col)};
    }
  }
  return {"gradients", true, fmt::format("max relative error {:.3e} over 4 losses",
                                         result.max_rel_error)};
}

CheckOutcome check_metrics(const RunConfig& config) {
  using namespace metrics;
  const std::vector<ActionSequence> preds{{1, 2}, {1, 3}}, gts{{1, 2}, {1, 2}};
  if (success_rate(preds, gts) != 50.0 || mean_accuracy(preds, gts) != 75.0 ||
      std::abs(mean_iou(preds, gts) - 200.0 / 3.0) > 1e-9) {
    return {"metric-identities", false, "worked example mismatch"};
  }
  Rng rng(derive_seed(config.get_u64("seed"), {0x6d6574ULL}));
  const int datasets = config.get_int("verify.metric_datasets");
  std::vector<PlanWindow> windows;
  for (int d = 0; d < datasets; ++d) {
    std::vector<ActionSequence> p, g;
    const int t = 1 + static_cast<int>(rng.uniform_index(4));
    for (int i = 0; i < 20; ++i) {
      ActionSequence a, b;
      for (int s = 0; s < t; ++s) {
        a.push_back(static_cast<ActionIndex>(rng.uniform_index(3)));
        b.push_back(static_cast<ActionIndex>(rng.uniform_index(3)));
      }
      p.push_back(a);
      g.push_back(b);
    }
    if (success_rate(p, g) > mean_accuracy(p, g)) {
      return {"metric-identities", false, fmt::format("SR > mAcc on dataset {}", d)};
    }
  }
  // Oracle predictor.
  for (int i = 0; i < 12; ++i) {
    PlanWindow w;
    w.horizon = 3;
    w.actions = {i % 4, (i + 1) % 4, (i / 4) % 4};
    w.start_obs = Vector::Constant(2, i);
    w.source_video_id = fmt::format("v{}", i);
    w.task_id = "t";
    w.start_state = i % 3;
    w.goal_state = i % 3 + 3;
    windows.push_back(w);
  }
  const TransitionMatrix uniform(Matrix::Constant(4, 4, 0.25));
  EvaluateOptions opt;
  opt.samples = 5;
  const auto r = evaluate(OracleSampler(), windows, uniform, opt).front();
  if (r.sr != 100.0 || r.macc != 100.0 || r.miou != 100.0 || r.kl > 1e-12 ||
      r.mode_precision != 1.0 || r.mode_recall != 1.0) {
    return {"metric-identities", false, "oracle predictor is not perfect"};
  }
  return {"metric-identities", true, "worked example, oracle predictor, SR <= mAcc"};
}

CheckOutcome check_row_sums(const RunConfig& config) {
  const int constructions = config.get_int("verify.random_constructions");
  Rng rng(derive_seed(config.get_u64("seed"), {0x726f77ULL}));
  double worst = 0.0;
  for (int i = 0; i < constructions; ++i) {
    const int n = 2 + static_cast<int>(rng.uniform_index(11));
    const int t = 1 + static_cast<int>(rng.uniform_index(6));
    const int k = 1 + static_cast<int>(rng.uniform_index(200));
    infer::SampledPlans s;
    s.horizon = t;
    for (int j = 0; j < k; ++j) {
      ActionSequence p;
      for (int x = 0; x < t; ++x) p.push_back(static_cast<ActionIndex>(rng.uniform_index(n)));
      s.plans.push_back(p);
    }
    const auto dist = infer::marginal_distribution(s, n);
    worst = std::max(worst, (dist.probs().rowwise().sum().array() - 1.0).abs().maxCoeff());
    if (t >= 2) {
      const auto a = infer::estimate_transition(s.plans, n);
      worst = std::max(worst, (a.probs().rowwise().sum().array() - 1.0).abs().maxCoeff());
      if ((a.probs().array() <= 0.0).any()) {
        return {"row-sums", false, "transition entry is not strictly positive"};
      }
    }
  }
  if (worst > 1e-9) return {"row-sums", false, fmt::format("row sum off by {:.3e}", worst)};
  const auto a = infer::estimate_transition({{0, 1, 2}, {0, 1, 1}}, 3);
  const double expected[] = {0.21194, 0.57612, 0.21194};
  for (int j = 0; j < 3; ++j) {
    if (std::abs(a.probs()(0, j) - expected[j]) > 1e-4) {
      return {"row-sums", false, "worked transition example mismatch"};
    }
  }
  return {"row-sums", true, fmt::format("{} constructions, worst deviation {:.1e}", constructions,
                                        worst)};
}

}  // namespace

std::vector<CheckOutcome> run_verification(const RunConfig& config, bool inject_fault) {
  return {check_viterbi(config), check_gradients(config, inject_fault), check_metrics(config),
          check_row_sums(config)};
}

}  // namespace capplan::cli
