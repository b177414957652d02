#include "capplan/evaluate.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <set>

#include <fmt/format.h>

#include "capplan/random.hpp"

namespace capplan::metrics {

namespace {

std::optional<std::string> group_key(const PlanWindow& w) {
  if (!w.task_id || !w.start_state || !w.goal_state) return std::nullopt;
  return fmt::format("{}|{}|{}|{}", *w.task_id, *w.start_state, *w.goal_state, w.horizon);
}

}  // namespace

infer::SampledPlans OracleSampler::sample(const PlanWindow& window, int count,
                                          std::uint64_t seed) const {
  infer::SampledPlans out;
  out.horizon = window.horizon;
  out.seed = seed;
  out.plans.assign(static_cast<std::size_t>(count), window.actions);
  return out;
}

infer::SampledPlans UniformSampler::sample(const PlanWindow& window, int count,
                                           std::uint64_t seed) const {
  Rng rng(seed);
  infer::SampledPlans out;
  out.horizon = window.horizon;
  out.seed = seed;
  for (int k = 0; k < count; ++k) {
    ActionSequence plan(static_cast<std::size_t>(window.horizon));
    for (auto& a : plan) {
      a = static_cast<ActionIndex>(rng.uniform_index(static_cast<std::uint64_t>(vocab_size_)));
    }
    out.plans.push_back(std::move(plan));
  }
  return out;
}

std::uint64_t window_seed(std::uint64_t seed, const PlanWindow& window) {
  // FNV-1a over the identifying content of the window.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (char c : window.source_video_id) mix(static_cast<unsigned char>(c));
  mix(static_cast<std::uint64_t>(window.horizon));
  for (ActionIndex a : window.actions) mix(static_cast<std::uint64_t>(a));
  for (Eigen::Index i = 0; i < window.start_obs.size(); ++i) {
    mix(std::bit_cast<std::uint64_t>(window.start_obs(i)));
  }
  return derive_seed(seed, {h});
}

std::vector<EvalGroup> build_groups(std::span<const PlanWindow> windows,
                                    const world::World* world) {
  std::map<std::string, EvalGroup> keyed;
  std::vector<EvalGroup> singles;
  for (const auto& w : windows) {
    const auto key = group_key(w);
    if (!key) {
      EvalGroup g;
      g.key = fmt::format("{}#{}", w.source_video_id, singles.size());
      g.gt_plans.push_back(w.actions);
      singles.push_back(std::move(g));
      continue;
    }
    auto [it, inserted] = keyed.try_emplace(*key);
    EvalGroup& g = it->second;
    if (inserted) {
      g.key = *key;
      if (world) {
        g.gt_distribution = world::gt_plan_distribution(
            *world, world->task_index(*w.task_id), *w.start_state, *w.goal_state, w.horizon);
      }
    }
    g.gt_plans.push_back(w.actions);
  }
  std::vector<EvalGroup> out;
  out.reserve(keyed.size() + singles.size());
  for (auto& [_, g] : keyed) out.push_back(std::move(g));
  for (auto& g : singles) out.push_back(std::move(g));
  return out;
}

std::vector<MetricReport> evaluate(const infer::PlanSampler& sampler,
                                   std::span<const PlanWindow> test,
                                   const TransitionMatrix& transitions,
                                   const EvaluateOptions& options) {
  if (test.empty()) throw DomainError("test split is empty");
  if (options.samples < 1) throw DomainError("evaluation needs K >= 1");
  std::set<int> horizons(options.horizons.begin(), options.horizons.end());
  if (horizons.empty()) {
    for (const auto& w : test) horizons.insert(w.horizon);
  }
  const int n = transitions.size();

  std::vector<MetricReport> reports;
  for (int horizon : horizons) {
    std::vector<PlanWindow> windows;
    for (const auto& w : test) {
      if (w.horizon == horizon) windows.push_back(w);
    }
    if (windows.empty()) {
      throw DomainError(fmt::format("no test windows with horizon {}", horizon));
    }
    std::vector<EvalGroup> groups = build_groups(windows, options.world);
    std::map<std::string, std::size_t> group_of;
    for (std::size_t i = 0; i < groups.size(); ++i) group_of[groups[i].key] = i;

    std::vector<ActionSequence> preds, gts;
    std::size_t single = 0;
    const std::size_t keyed = groups.size() - static_cast<std::size_t>(std::count_if(
        windows.begin(), windows.end(), [](const PlanWindow& w) { return !group_key(w); }));
    for (const auto& w : windows) {
      const auto result = infer::plan(sampler, w, options.samples, transitions,
                                      window_seed(options.seed, w));
      preds.push_back(result.plan);
      gts.push_back(w.actions);
      const auto key = group_key(w);
      EvalGroup& g = key ? groups[group_of.at(*key)] : groups[keyed + single++];
      g.add_samples(result.samples.plans);
    }

    MetricReport r;
    r.horizon = horizon;
    r.sr = success_rate(preds, gts);
    r.macc = mean_accuracy(preds, gts);
    r.miou = mean_iou(preds, gts);
    r.num_samples = options.samples;
    r.seed = options.seed;
    r.num_windows = static_cast<int>(windows.size());
    r.num_groups = static_cast<int>(groups.size());
    for (const auto& g : groups) {
      const PlanProbabilities gt = ground_truth_distribution(g);
      const PlanProbabilities pred = empirical_distribution(g.sample_counts);
      r.kl += kl_divergence(pred, gt);
      r.nll += nll(g);
      r.cosine_distance += cosine_distance(step_marginals(pred, horizon, n),
                                           step_marginals(gt, horizon, n));
      const ModeMetrics m = mode_metrics(g);
      r.mode_precision += m.precision;
      r.mode_recall += m.recall;
    }
    const double ng = static_cast<double>(groups.size());
    r.kl /= ng;
    r.nll /= ng;
    r.cosine_distance /= ng;
    r.mode_precision /= ng;
    r.mode_recall /= ng;
    reports.push_back(r);
  }
  return reports;
}

}  // namespace capplan::metrics
