#pragma once

// Plan evaluation metrics: exact-match success rate, order-aware accuracy,
// set overlap, and distributional metrics over sampled plans.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "capplan/core.hpp"

namespace capplan::metrics {

using PlanProbabilities = std::map<ActionSequence, double>;
using PlanCounts = std::map<ActionSequence, long>;

// Percentages in [0, 100]. Inputs must pair up one to one with equal lengths;
// otherwise ShapeError.
double success_rate(const std::vector<ActionSequence>& preds,
                    const std::vector<ActionSequence>& gts);
double mean_accuracy(const std::vector<ActionSequence>& preds,
                     const std::vector<ActionSequence>& gts);
// Averaged per sample.
double mean_iou(const std::vector<ActionSequence>& preds,
                const std::vector<ActionSequence>& gts);

// KL(gt || pred) over the union of both supports. Predicted probabilities are
// floored at epsilon and renormalized. Both inputs must sum to 1 within 1e-6.
double kl_divergence(const PlanProbabilities& pred, const PlanProbabilities& gt,
                     double epsilon = 1e-8);

// Plans evaluated together: every window sharing a (task, start, goal,
// horizon) key contributes its ground truth plan and its samples.
struct EvalGroup {
  std::string key;
  std::vector<ActionSequence> gt_plans;
  PlanCounts sample_counts;
  long num_samples = 0;
  std::optional<PlanProbabilities> gt_distribution;

  int horizon() const;
  void add_samples(const std::vector<ActionSequence>& plans);
};

struct ModeMetrics {
  double precision = 0.0;
  double recall = 0.0;
};

// Modes are the distinct ground truth plans of the group. Precision is the
// fraction of samples equal to some mode; recall the fraction of modes seen
// at least once.
ModeMetrics mode_metrics(const EvalGroup& group);

// Mean over gt_plans of -log(frequency + epsilon); epsilon defaults to
// 1 / (2 K) with K the group's sample count.
double nll(const EvalGroup& group, std::optional<double> epsilon = std::nullopt);

// 1 - cos of the angle between the flattened matrices. ShapeError on shape
// mismatch, DomainError when either is all zeros.
double cosine_distance(const Matrix& pred, const Matrix& gt);
double cosine_distance(const PlanDistribution& pred, const PlanDistribution& gt);

// Normalized sample frequencies.
PlanProbabilities empirical_distribution(const PlanCounts& counts);
// Per-step marginals of a distribution over length-T plans.
PlanDistribution step_marginals(const PlanProbabilities& dist, int horizon, int vocab_size);
// The ground truth distribution of a group: the exact one when known,
// otherwise the empirical distribution of its gt_plans.
PlanProbabilities ground_truth_distribution(const EvalGroup& group);

// {"horizon":..,"sr":..,"macc":..,"miou":..,"kl":..,"nll":..,
//  "cosine_distance":..,"mode_precision":..,"mode_recall":..,"K":..,"seed":..}
std::string format_report(const MetricReport& report);

}  // namespace capplan::metrics
