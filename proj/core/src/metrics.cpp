#include "capplan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "capplan/dataset_io.hpp"

namespace capplan::metrics {

namespace {

void check_pairs(const std::vector<ActionSequence>& preds,
                 const std::vector<ActionSequence>& gts) {
  if (preds.size() != gts.size()) {
    throw ShapeError(fmt::format("{} predictions for {} ground truth plans", preds.size(),
                                 gts.size()));
  }
  if (preds.empty()) throw ShapeError("no plans to score");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != gts[i].size() || gts[i].empty()) {
      throw ShapeError(fmt::format("plan {} has length {}, ground truth {}", i,
                                   preds[i].size(), gts[i].size()));
    }
  }
}

double total_mass(const PlanProbabilities& d) {
  double s = 0.0;
  for (const auto& [_, p] : d) s += p;
  return s;
}

}  // namespace

double success_rate(const std::vector<ActionSequence>& preds,
                    const std::vector<ActionSequence>& gts) {
  check_pairs(preds, gts);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == gts[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mean_accuracy(const std::vector<ActionSequence>& preds,
                     const std::vector<ActionSequence>& gts) {
  check_pairs(preds, gts);
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::size_t match = 0;
    for (std::size_t t = 0; t < preds[i].size(); ++t) match += preds[i][t] == gts[i][t] ? 1 : 0;
    acc += static_cast<double>(match) / static_cast<double>(preds[i].size());
  }
  return 100.0 * acc / static_cast<double>(preds.size());
}

double mean_iou(const std::vector<ActionSequence>& preds,
                const std::vector<ActionSequence>& gts) {
  check_pairs(preds, gts);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::set<ActionIndex> p(preds[i].begin(), preds[i].end());
    const std::set<ActionIndex> g(gts[i].begin(), gts[i].end());
    std::vector<ActionIndex> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(inter));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(uni));
    total += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
  }
  return 100.0 * total / static_cast<double>(preds.size());
}

double kl_divergence(const PlanProbabilities& pred, const PlanProbabilities& gt,
                     double epsilon) {
  for (const auto* d : {&pred, &gt}) {
    const double s = total_mass(*d);
    if (std::abs(s - 1.0) > 1e-6) {
      throw DomainError(fmt::format("distribution sums to {}, expected 1", s));
    }
    for (const auto& [_, p] : *d) {
      if (!(p >= 0.0)) throw DomainError("distribution has a negative or NaN entry");
    }
  }
  std::set<ActionSequence> support;
  for (const auto& [plan, _] : pred) support.insert(plan);
  for (const auto& [plan, _] : gt) support.insert(plan);
  std::map<ActionSequence, double> floored;
  double mass = 0.0;
  for (const auto& plan : support) {
    auto it = pred.find(plan);
    const double q = std::max(epsilon, it == pred.end() ? 0.0 : it->second);
    floored[plan] = q;
    mass += q;
  }
  double kl = 0.0;
  for (const auto& [plan, p] : gt) {
    if (p > 0.0) kl += p * (std::log(p) - std::log(floored[plan] / mass));
  }
  return std::max(0.0, kl);
}

int EvalGroup::horizon() const {
  return gt_plans.empty() ? 0 : static_cast<int>(gt_plans.front().size());
}

void EvalGroup::add_samples(const std::vector<ActionSequence>& plans) {
  for (const auto& p : plans) ++sample_counts[p];
  num_samples += static_cast<long>(plans.size());
}

ModeMetrics mode_metrics(const EvalGroup& group) {
  if (group.num_samples < 1) throw DomainError("mode metrics need at least one sample");
  if (group.gt_plans.empty()) throw DomainError("mode metrics need ground truth plans");
  const std::set<ActionSequence> modes(group.gt_plans.begin(), group.gt_plans.end());
  long on_mode = 0;
  std::size_t seen = 0;
  for (const auto& mode : modes) {
    auto it = group.sample_counts.find(mode);
    if (it != group.sample_counts.end() && it->second > 0) {
      on_mode += it->second;
      ++seen;
    }
  }
  return ModeMetrics{static_cast<double>(on_mode) / static_cast<double>(group.num_samples),
                     static_cast<double>(seen) / static_cast<double>(modes.size())};
}

double nll(const EvalGroup& group, std::optional<double> epsilon) {
  if (group.num_samples < 1) throw DomainError("NLL needs K >= 1");
  if (group.gt_plans.empty()) throw DomainError("NLL needs ground truth plans");
  const double k = static_cast<double>(group.num_samples);
  const double eps = epsilon.value_or(1.0 / (2.0 * k));
  double total = 0.0;
  for (const auto& plan : group.gt_plans) {
    auto it = group.sample_counts.find(plan);
    const double freq = it == group.sample_counts.end() ? 0.0 : static_cast<double>(it->second) / k;
    total -= std::log(freq + eps);
  }
  return total / static_cast<double>(group.gt_plans.size());
}

double cosine_distance(const Matrix& pred, const Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw ShapeError(fmt::format("cosine distance between {}x{} and {}x{}", pred.rows(),
                                 pred.cols(), gt.rows(), gt.cols()));
  }
  const double np = pred.norm(), ng = gt.norm();
  if (np == 0.0 || ng == 0.0) throw DomainError("cosine distance of a zero vector");
  const double cos = std::clamp(pred.cwiseProduct(gt).sum() / (np * ng), -1.0, 1.0);
  return 1.0 - cos;
}

double cosine_distance(const PlanDistribution& pred, const PlanDistribution& gt) {
  return cosine_distance(pred.probs(), gt.probs());
}

PlanProbabilities empirical_distribution(const PlanCounts& counts) {
  long total = 0;
  for (const auto& [_, c] : counts) total += c;
  if (total <= 0) throw DomainError("empirical distribution of no samples");
  PlanProbabilities out;
  for (const auto& [plan, c] : counts) {
    if (c > 0) out[plan] = static_cast<double>(c) / static_cast<double>(total);
  }
  return out;
}

PlanDistribution step_marginals(const PlanProbabilities& dist, int horizon, int vocab_size) {
  Matrix m = Matrix::Zero(horizon, vocab_size);
  for (const auto& [plan, p] : dist) {
    if (static_cast<int>(plan.size()) != horizon) throw ShapeError("plan length differs from horizon");
    for (int t = 0; t < horizon; ++t) {
      const ActionIndex a = plan[static_cast<std::size_t>(t)];
      if (a < 0 || a >= vocab_size) throw DomainError(fmt::format("action {} outside N={}", a, vocab_size));
      m(t, a) += p;
    }
  }
  for (Eigen::Index t = 0; t < m.rows(); ++t) m.row(t) /= m.row(t).sum();
  return PlanDistribution(std::move(m));
}

PlanProbabilities ground_truth_distribution(const EvalGroup& group) {
  if (group.gt_distribution) return *group.gt_distribution;
  PlanCounts counts;
  for (const auto& p : group.gt_plans) ++counts[p];
  return empirical_distribution(counts);
}

std::string format_report(const MetricReport& r) {
  using io::format_real;
  return fmt::format(
      "{{\"horizon\":{},\"sr\":{},\"macc\":{},\"miou\":{},\"kl\":{},\"nll\":{},"
      "\"cosine_distance\":{},\"mode_precision\":{},\"mode_recall\":{},\"K\":{},\"seed\":{}}}",
      r.horizon, format_real(r.sr), format_real(r.macc), format_real(r.miou), format_real(r.kl),
      format_real(r.nll), format_real(r.cosine_distance), format_real(r.mode_precision),
      format_real(r.mode_recall), r.num_samples, r.seed);
}

}  // namespace capplan::metrics
