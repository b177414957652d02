#include <cmath>

#include <gtest/gtest.h>

#include "capplan/metrics.hpp"
#include "test_support.hpp"

namespace capplan::metrics {
namespace {

using Plans = std::vector<ActionSequence>;

const Plans kPreds{{1, 2}, {1, 3}};
const Plans kGts{{1, 2}, {1, 2}};

TEST(SuccessRate, WorkedExample) {
  EXPECT_EQ(success_rate(kPreds, kGts), 50.0);
  EXPECT_EQ(success_rate(kGts, kGts), 100.0);
  EXPECT_EQ(success_rate({{0, 0}}, {{1, 1}}), 0.0);
}

TEST(SuccessRate, MismatchedInputsAreShapeErrors) {
  EXPECT_THROW(success_rate({{1, 2}}, kGts), ShapeError);
  EXPECT_THROW(success_rate({{1, 2, 3}, {1, 2}}, kGts), ShapeError);
  EXPECT_THROW(mean_accuracy({{1}}, {{1, 2}}), ShapeError);
  EXPECT_THROW(mean_iou({}, {}), ShapeError);
}

TEST(MeanAccuracy, WorkedExample) {
  EXPECT_EQ(mean_accuracy(kPreds, kGts), 75.0);
  EXPECT_EQ(mean_accuracy(kGts, kGts), 100.0);
  EXPECT_EQ(mean_accuracy({{2, 1}}, {{1, 2}}), 0.0);
}

TEST(MeanIou, WorkedExample) {
  EXPECT_NEAR(mean_iou(kPreds, kGts), 100.0 * (1.0 + 1.0 / 3.0) / 2.0, 1e-12);
  EXPECT_NEAR(mean_iou(kPreds, kGts), 66.67, 0.01);
  EXPECT_EQ(mean_iou({{2, 1}}, {{1, 2}}), 100.0);
  EXPECT_EQ(mean_iou({{3, 4}}, {{1, 2}}), 0.0);
}

TEST(MeanIou, RepeatedActionsCountOnceAsSets) {
  EXPECT_NEAR(mean_iou({{1, 1, 2}}, {{1, 2, 2}}), 100.0, 1e-12);
}

TEST(MetricInvariants, SuccessRateNeverExceedsAccuracy) {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    Plans preds, gts;
    const int n = 1 + static_cast<int>(rng.uniform_index(30));
    const int t = 1 + static_cast<int>(rng.uniform_index(5));
    for (int i = 0; i < n; ++i) {
      ActionSequence p, g;
      for (int s = 0; s < t; ++s) {
        g.push_back(static_cast<int>(rng.uniform_index(3)));
        p.push_back(rng.uniform() < 0.7 ? g.back() : static_cast<int>(rng.uniform_index(3)));
      }
      preds.push_back(p);
      gts.push_back(g);
    }
    EXPECT_LE(success_rate(preds, gts), mean_accuracy(preds, gts));
    EXPECT_LE(mean_accuracy(preds, gts), 100.0);
    // Order of the evaluation set is irrelevant.
    Plans rp(preds.rbegin(), preds.rend()), rg(gts.rbegin(), gts.rend());
    EXPECT_DOUBLE_EQ(mean_iou(preds, gts), mean_iou(rp, rg));
    EXPECT_DOUBLE_EQ(mean_accuracy(preds, gts), mean_accuracy(rp, rg));
  }
}

TEST(KlDivergence, IdenticalIsZero) {
  const PlanProbabilities d{{{0, 1}, 0.3}, {{1, 1}, 0.7}};
  EXPECT_NEAR(kl_divergence(d, d), 0.0, 1e-15);
}

TEST(KlDivergence, SingleTerm) {
  const PlanProbabilities gt{{{0}, 1.0}};
  const PlanProbabilities pred{{{0}, 0.5}, {{1}, 0.5}};
  EXPECT_NEAR(kl_divergence(pred, gt), std::log(2.0), 1e-12);
}

TEST(KlDivergence, MissingModeIsLargeButBounded) {
  const PlanProbabilities gt{{{0}, 1.0}};
  const PlanProbabilities pred{{{1}, 1.0}};
  const double kl = kl_divergence(pred, gt);
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_GT(kl, 10.0);
  EXPECT_LE(kl, -std::log(1e-8) + 1e-6);
}

TEST(KlDivergence, RejectsUnnormalizedInput) {
  const PlanProbabilities gt{{{0}, 0.9}};
  EXPECT_THROW(kl_divergence(gt, gt), DomainError);
}

TEST(KlDivergence, NonNegativeOnRandomPairs) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    PlanProbabilities a, b;
    double sa = 0, sb = 0;
    for (int i = 0; i < 4; ++i) {
      a[{i}] = rng.uniform();
      b[{i}] = rng.uniform();
      sa += a[{i}];
      sb += b[{i}];
    }
    for (auto& [_, p] : a) p /= sa;
    for (auto& [_, p] : b) p /= sb;
    EXPECT_GE(kl_divergence(a, b), 0.0);
  }
}

EvalGroup group_with(Plans gt, std::vector<std::pair<ActionSequence, long>> samples) {
  EvalGroup g;
  g.key = "g";
  g.gt_plans = std::move(gt);
  for (const auto& [plan, count] : samples) {
    g.add_samples(std::vector<ActionSequence>(static_cast<std::size_t>(count), plan));
  }
  return g;
}

const ActionSequence kAB{0, 1}, kAC{0, 2}, kXY{5, 6};

TEST(ModeMetrics, BothModesCovered) {
  const ModeMetrics m = mode_metrics(group_with({kAB, kAC}, {{kAB, 900}, {kAC, 600}}));
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
}

TEST(ModeMetrics, OneModeMissed) {
  const ModeMetrics m = mode_metrics(group_with({kAB, kAC}, {{kAB, 1500}}));
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 0.5);
}

TEST(ModeMetrics, AllOffMode) {
  const ModeMetrics m = mode_metrics(group_with({kAB, kAC}, {{kXY, 10}}));
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
}

TEST(ModeMetrics, DuplicateGroundTruthIsOneMode) {
  const ModeMetrics m = mode_metrics(group_with({kAB, kAB, kAC}, {{kAB, 3}, {kXY, 1}}));
  EXPECT_EQ(m.precision, 0.75);
  EXPECT_EQ(m.recall, 0.5);
}

TEST(Nll, HalfTheSamples) {
  const EvalGroup g = group_with({kAB}, {{kAB, 750}, {kAC, 750}});
  EXPECT_NEAR(nll(g), -std::log(0.5 + 1.0 / 3000.0), 1e-12);
  EXPECT_NEAR(nll(g), std::log(2.0), 1e-3);
}

TEST(Nll, AlwaysSampledIsNearZero) {
  EXPECT_NEAR(nll(group_with({kAB}, {{kAB, 1500}})), 0.0, 1e-3);
}

TEST(Nll, NeverSampledHitsTheFloor) {
  const double v = nll(group_with({kAB}, {{kAC, 1500}}));
  EXPECT_NEAR(v, std::log(3000.0), 1e-12);
  EXPECT_NEAR(v, 8.006, 1e-3);
}

TEST(CosineDistance, Cases) {
  Matrix a(2, 3);
  a << 0.5, 0.5, 0, 0, 1, 0;
  EXPECT_NEAR(cosine_distance(a, a), 0.0, 1e-15);
  Matrix b(2, 3), c(2, 3);
  b << 1, 0, 0, 0, 1, 0;
  c << 0, 1, 0, 0, 0, 1;
  EXPECT_NEAR(cosine_distance(b, c), 1.0, 1e-15);
  // Column permutation with no overlap.
  Matrix p(2, 3);
  p << 0, 0, 1, 1, 0, 0;
  EXPECT_NEAR(cosine_distance(b, p), 1.0, 1e-15);
  EXPECT_THROW(cosine_distance(Matrix::Zero(2, 3), b), DomainError);
  EXPECT_THROW(cosine_distance(Matrix::Ones(1, 3), b), ShapeError);
}

TEST(StepMarginals, SumOverPlans) {
  const PlanProbabilities d{{{0, 1}, 0.25}, {{0, 2}, 0.75}};
  Matrix expected(2, 3);
  expected << 1, 0, 0, 0, 0.25, 0.75;
  EXPECT_TRUE(step_marginals(d, 2, 3).probs().isApprox(expected, 1e-15));
}

TEST(GroundTruthDistribution, ExactWhenKnownEmpiricalOtherwise) {
  EvalGroup g = group_with({kAB, kAB, kAC, kAB}, {{kAB, 1}});
  const PlanProbabilities emp = ground_truth_distribution(g);
  EXPECT_DOUBLE_EQ(emp.at(kAB), 0.75);
  g.gt_distribution = PlanProbabilities{{kAB, 0.7}, {kAC, 0.3}};
  EXPECT_DOUBLE_EQ(ground_truth_distribution(g).at(kAB), 0.7);
}

TEST(FormatReport, HasEveryKey) {
  MetricReport r;
  r.horizon = 3;
  r.num_samples = 1500;
  r.seed = 4;
  const std::string s = format_report(r);
  for (const char* key : {"\"horizon\":3", "\"sr\":", "\"macc\":", "\"miou\":", "\"kl\":",
                          "\"nll\":", "\"cosine_distance\":", "\"mode_precision\":",
                          "\"mode_recall\":", "\"K\":1500", "\"seed\":4"}) {
    EXPECT_NE(s.find(key), std::string::npos) << key;
  }
}

}  // namespace
}  // namespace capplan::metrics
