#include <gtest/gtest.h>

#include "capplan/grad_check.hpp"
#include "capplan/reference.hpp"
#include "test_support.hpp"

namespace capplan::train {
namespace {

constexpr LossTerm kTerms[] = {LossTerm::Contrastive, LossTerm::CrossEntropy,
                               LossTerm::GeneratorAdversarial, LossTerm::Critic};

class GradCheck : public ::testing::Test {
 protected:
  model::GeneratorConfig config = tiny_config();
  model::ModelState state = model::init_parameters(config, 41);
  std::vector<PlanWindow> batch = testing::random_windows(77, 3, 6, 2, 4);
};

TEST_F(GradCheck, TinyConfigMatchesTheStatedSizes) {
  EXPECT_EQ(config.hidden_dim, 8);
  EXPECT_EQ(config.heads, 2);
  EXPECT_EQ(config.layers, 2);
  EXPECT_EQ(config.vocab_size, 4);
  EXPECT_EQ(config.max_horizon, 2);
  EXPECT_EQ(config.memory_entries, 8);
}

TEST_F(GradCheck, ReferenceForwardAgreesWithTape) {
  const ReferenceModel<double> ref(state);
  for (LossTerm term : kTerms) {
    ad::Tape tape(false);
    model::ParamBinder p(tape, state);
    const double tape_value = build_loss(p, batch, 5, term).value()(0, 0);
    const BatchInputs in = assemble_batch(config, batch, term == LossTerm::Contrastive, 5);
    EXPECT_NEAR(ref.loss(in, term), tape_value, 1e-12 * std::max(1.0, tape_value))
        << to_string(term);
  }
}

TEST_F(GradCheck, AllLossesWithinTolerance) {
  const GradCheckResult r = grad_check(state, batch, 5);
  ASSERT_EQ(r.terms.size(), 4u);
  for (const auto& t : r.terms) {
    EXPECT_LE(t.max_rel_error, 1e-4) << to_string(t.term) << " worst " << t.worst_param;
    EXPECT_GT(t.entries, 0u);
  }
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST_F(GradCheck, CriticTermCoversOnlyCriticParameters) {
  const LossTerm critic[] = {LossTerm::Critic};
  const GradCheckResult r = grad_check(state, batch, 5, 1e-5, critic);
  std::size_t critic_entries = 0;
  for (const auto& [name, m] : state.params) {
    if (model::is_critic_param(name)) critic_entries += static_cast<std::size_t>(m.size());
  }
  EXPECT_EQ(r.terms.at(0).entries, critic_entries);
}

TEST_F(GradCheck, FlatLossReportsZeroError) {
  // With every critic weight zero the critic is constant at 1/2, so the
  // critic loss has no gradient through the hidden layers.
  for (auto& [name, m] : state.params) {
    if (model::is_critic_param(name)) m.setZero();
  }
  const LossTerm critic[] = {LossTerm::Critic};
  const GradCheckResult r = grad_check(state, batch, 5, 1e-5, critic);
  EXPECT_LE(r.max_rel_error, 1e-8);
}

TEST_F(GradCheck, OnePercentCorruptionIsDetected) {
  for (LossTerm term : kTerms) {
    const LossTerm one[] = {term};
    GradFault fault;
    fault.term = term;
    const GradCheckResult r = grad_check(state, batch, 5, 1e-5, one, fault);
    EXPECT_GT(r.max_rel_error, 1e-3) << to_string(term);
  }
}

}  // namespace
}  // namespace capplan::train
