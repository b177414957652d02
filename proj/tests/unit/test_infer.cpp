#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "capplan/grad_check.hpp"
#include "capplan/infer.hpp"
#include "test_support.hpp"

namespace capplan::infer {
namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

TransitionMatrix uniform(int n) { return TransitionMatrix(Matrix::Constant(n, n, 1.0 / n)); }

class Sampling : public ::testing::Test {
 protected:
  model::GeneratorConfig config = [] {
    model::GeneratorConfig c = train::tiny_config();
    c.max_horizon = 3;
    return c;
  }();
  model::ModelState state = model::init_parameters(config, 6);
  PlanWindow window = testing::random_windows(12, 1, 6, 3, 4).front();
};

TEST_F(Sampling, ShapeAndRange) {
  const SampledPlans s = sample_plans(state, window, 4, 9);
  EXPECT_EQ(s.count(), 4);
  EXPECT_EQ(s.horizon, 3);
  for (const auto& p : s.plans) {
    ASSERT_EQ(p.size(), 3u);
    for (ActionIndex a : p) {
      EXPECT_GE(a, 0);
      EXPECT_LT(a, 4);
    }
  }
  EXPECT_THROW(sample_plans(state, window, 0, 9), DomainError);
}

TEST_F(Sampling, SameSeedSamePlans) {
  EXPECT_EQ(sample_plans(state, window, 50, 3).plans, sample_plans(state, window, 50, 3).plans);
}

TEST_F(Sampling, NoiseMakesPlansVary) {
  // Scale the noise projection up so z dominates the queries.
  state.param("noise.w") *= 50.0;
  const SampledPlans s = sample_plans(state, window, 200, 3);
  std::set<ActionSequence> distinct(s.plans.begin(), s.plans.end());
  EXPECT_GT(distinct.size(), 1u);
}

TEST_F(Sampling, FrozenHeadGivesIdenticalPlans) {
  state.param("head.w").setZero();
  state.param("head.b") << 0.1, 0.9, 0.3, 0.2;
  const SampledPlans s = sample_plans(state, window, 20, 1);
  for (const auto& p : s.plans) EXPECT_EQ(p, (ActionSequence{1, 1, 1}));
}

TEST_F(Sampling, TiesGoToLowestIndex) {
  state.param("head.w").setZero();
  state.param("head.b") << 0.0, 0.5, 0.5, 0.5;
  for (const auto& p : sample_plans(state, window, 5, 1).plans) {
    EXPECT_EQ(p, (ActionSequence{1, 1, 1}));
  }
}

TEST_F(Sampling, BatchedLogitsMatchSingleDraws) {
  Rng rng(1);
  Matrix noise(3, config.noise_dim);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
  const Matrix all = sample_logits(state, window, noise);
  ASSERT_EQ(all.rows(), 9);
  for (int k = 0; k < 3; ++k) {
    const Matrix one = sample_logits(state, window, noise.row(k));
    EXPECT_TRUE(all.middleRows(3 * k, 3).isApprox(one, 1e-12));
  }
}

TEST(MarginalDistribution, HandCountedFrequencies) {
  SampledPlans s{{{0, 1}, {0, 2}, {1, 1}, {0, 1}}, 2, 0};
  const PlanDistribution d = marginal_distribution(s, 3);
  EXPECT_TRUE(d.probs().isApprox(rows({{0.75, 0.25, 0}, {0, 0.75, 0.25}}), 1e-15));
}

TEST(MarginalDistribution, SingleSampleGivesOneHots) {
  SampledPlans s{{{2, 0, 1}}, 3, 0};
  const Matrix p = marginal_distribution(s, 3).probs();
  EXPECT_EQ(p, rows({{0, 0, 1}, {1, 0, 0}, {0, 1, 0}}));
}

TEST(MarginalDistribution, IdenticalPlansAreDeterministic) {
  SampledPlans s{std::vector<ActionSequence>(7, {1, 2}), 2, 0};
  EXPECT_EQ(marginal_distribution(s, 4).probs(), rows({{0, 1, 0, 0}, {0, 0, 1, 0}}));
}

TEST(MarginalDistribution, RowsSumToOneEntriesAreMultiplesOfOneOverK) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_index(40));
    const int n = 2 + static_cast<int>(rng.uniform_index(8));
    SampledPlans s;
    s.horizon = 4;
    for (int i = 0; i < k; ++i) {
      ActionSequence p;
      for (int t = 0; t < 4; ++t) p.push_back(static_cast<int>(rng.uniform_index(n)));
      s.plans.push_back(p);
    }
    const Matrix m = marginal_distribution(s, n).probs();
    EXPECT_TRUE(is_row_stochastic(m));
    const Eigen::ArrayXXd scaled = m.array() * k;
    EXPECT_TRUE((scaled - scaled.round()).abs().maxCoeff() < 1e-9);
  }
}

TEST(MarginalDistribution, RejectsOutOfVocabularyActions) {
  SampledPlans s{{{0, 3}}, 2, 0};
  EXPECT_THROW(marginal_distribution(s, 3), DomainError);
}

TEST(EstimateTransition, WorkedExample) {
  const TransitionMatrix a = estimate_transition({{0, 1, 2}, {0, 1, 1}}, 3);
  const double e = std::exp(1.0);
  EXPECT_NEAR(a.probs()(0, 0), 1 / (2 + e), 1e-12);
  EXPECT_NEAR(a.probs()(0, 1), e / (2 + e), 1e-12);
  EXPECT_NEAR(a.probs()(0, 0), 0.21194, 1e-4);
  EXPECT_NEAR(a.probs()(0, 1), 0.57612, 1e-4);
  EXPECT_NEAR(a.probs()(0, 2), 0.21194, 1e-4);
  // Row 1 counts [0,1,1] -> L1 [0,.5,.5] -> softmax.
  const double z = 1 + 2 * std::exp(0.5);
  EXPECT_NEAR(a.probs()(1, 0), 1 / z, 1e-12);
  EXPECT_NEAR(a.probs()(1, 0), 0.23270, 1e-4);
  EXPECT_NEAR(a.probs()(1, 1), 0.38365, 1e-4);
  // Row 2 was never a source: uniform.
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(a.probs()(2, j), 1.0 / 3.0, 1e-15);
}

TEST(EstimateTransition, DuplicatingPlansChangesNothing) {
  const std::vector<ActionSequence> plans{{0, 1, 2, 3}, {3, 1, 1}, {2, 0}};
  std::vector<ActionSequence> doubled = plans;
  doubled.insert(doubled.end(), plans.begin(), plans.end());
  EXPECT_TRUE(estimate_transition(plans, 4).probs().isApprox(
      estimate_transition(doubled, 4).probs(), 1e-15));
}

TEST(EstimateTransition, TemperatureSharpens) {
  const TransitionMatrix cold = estimate_transition({{0, 1}}, 2, 0.1);
  EXPECT_NEAR(cold.probs()(0, 1), 1 / (1 + std::exp(-10.0)), 1e-12);
  EXPECT_THROW(estimate_transition({{0, 1}}, 2, 0.0), DomainError);
}

TEST(EstimateTransition, NeedsATransition) {
  EXPECT_THROW(estimate_transition({{0}, {1}}, 2), DomainError);
}

TEST(Viterbi, UniformTransitionsReduceToArgmax) {
  EXPECT_EQ(viterbi_decode(uniform(2), rows({{0.9, 0.1}, {0.2, 0.8}})), (ActionSequence{0, 1}));
}

TEST(Viterbi, TieResolvesToLexicographicallySmallest) {
  const TransitionMatrix a(rows({{0.1, 0.9}, {0.9, 0.1}}));
  const Matrix b = rows({{0.6, 0.4}, {0.6, 0.4}});
  // 01 and 10 both score 0.6*0.9*0.4 = 0.216.
  EXPECT_EQ(viterbi_decode(a, b), (ActionSequence{0, 1}));
  EXPECT_EQ(brute_force_decode(a, b), (ActionSequence{0, 1}));
}

TEST(Viterbi, SingleStepIsArgmax) {
  EXPECT_EQ(viterbi_decode(uniform(3), rows({{0.2, 0.5, 0.3}})), (ActionSequence{1}));
}

TEST(Viterbi, ZeroEmissionsAreImpossible) {
  const TransitionMatrix a(rows({{0.01, 0.99}, {0.99, 0.01}}));
  // The transition favours 0->1 but step 1 cannot emit action 1.
  EXPECT_EQ(viterbi_decode(a, rows({{1.0, 0.0}, {1.0, 0.0}})), (ActionSequence{0, 0}));
}

TEST(Viterbi, DegenerateEmissionsNameTheStep) {
  try {
    viterbi_decode(uniform(2), rows({{0.5, 0.5}, {0.0, 0.0}}));
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate emissions at step 1"), std::string::npos);
  }
}

TEST(BruteForce, SingleStateHasOnePath) {
  const TransitionMatrix a(Matrix::Ones(1, 1));
  EXPECT_EQ(brute_force_decode(a, Matrix::Ones(3, 1)), (ActionSequence{0, 0, 0}));
  EXPECT_EQ(viterbi_decode(a, Matrix::Ones(3, 1)), (ActionSequence{0, 0, 0}));
}

TEST(BruteForce, RefusesHugeInstances) {
  EXPECT_THROW(brute_force_decode(uniform(10), Matrix::Constant(7, 10, 0.1)), DomainError);
}

Matrix random_stochastic(Rng& rng, int r, int c, bool coarse, bool allow_zero) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      // Coarse values make exact ties common.
      double v = coarse ? static_cast<double>(rng.uniform_index(3)) : rng.uniform();
      if (!allow_zero) v += coarse ? 1.0 : 1e-3;
      m(i, j) = v;
    }
    if (m.row(i).sum() == 0.0) m(i, static_cast<Eigen::Index>(rng.uniform_index(c))) = 1.0;
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

TEST(BruteForce, AgreesWithViterbiOnRandomInstances) {
  Rng rng(2718);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 5, t = 4;
    const bool coarse = trial % 2 == 1;
    const TransitionMatrix a(random_stochastic(rng, n, n, coarse, false));
    const Matrix b = random_stochastic(rng, t, n, coarse, true);
    ASSERT_EQ(viterbi_decode(a, b), brute_force_decode(a, b)) << "trial " << trial;
  }
}

TEST_F(Sampling, PlanComposesSamplingMarginalsAndViterbi) {
  const TransitionMatrix a = estimate_transition({{0, 1, 2}, {1, 2, 3}, {3, 0, 0}}, 4);
  const PlanResult r = plan(state, window, 64, a, 17);
  const SampledPlans s = sample_plans(state, window, 64, 17);
  EXPECT_EQ(r.samples.plans, s.plans);
  EXPECT_EQ(r.distribution.probs(), marginal_distribution(s, 4).probs());
  EXPECT_EQ(r.plan, viterbi_decode(a, r.distribution));
  EXPECT_EQ(plan(state, window, 64, a, 17).plan, r.plan);
}

TEST_F(Sampling, DeterministicGeneratorWithUniformTransitionsDecodesArgmax) {
  state.param("head.w").setZero();
  state.param("head.b") << 0.1, 0.2, 0.9, 0.3;
  EXPECT_EQ(plan(state, window, 10, uniform(4), 3).plan, (ActionSequence{2, 2, 2}));
}

}  // namespace
}  // namespace capplan::infer
