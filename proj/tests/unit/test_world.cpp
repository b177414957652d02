#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "capplan/world.hpp"

namespace capplan::world {
namespace {

TaskGraph linear_task(const std::string& name, std::vector<ActionIndex> actions) {
  TaskGraph g;
  g.name = name;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    TaskNode n{actions[i], {}};
    if (i + 1 < actions.size()) n.successors.push_back({static_cast<int>(i + 1), 1.0});
    g.nodes.push_back(n);
  }
  return g;
}

// Root action 0, then action 1 (prob p) or action 2 (prob 1-p), both followed
// by action 3.
TaskGraph branching_task(double p) {
  TaskGraph g;
  g.name = "branch";
  g.nodes = {TaskNode{0, {{1, p}, {2, 1.0 - p}}}, TaskNode{1, {{3, 1.0}}},
             TaskNode{2, {{3, 1.0}}}, TaskNode{3, {}}};
  return g;
}

WorldSpec spec_with(std::vector<TaskGraph> tasks, double sigma = 0.0, int dim = 16) {
  WorldSpec s;
  s.tasks = std::move(tasks);
  s.vocab_size = 6;
  s.obs_dim = dim;
  s.obs_noise_sigma = sigma;
  s.seed = 11;
  return s;
}

TEST(BuildWorld, DefaultSpecHasRequestedTasks) {
  World w(default_world_spec(3));
  EXPECT_EQ(w.num_tasks(), 4);
  EXPECT_EQ(w.spec().vocab_size, 12);
  EXPECT_EQ(w.obs_mean(0, 0).size(), 512);
}

TEST(BuildWorld, SameSpecGivesBitIdenticalWorlds) {
  World a(default_world_spec(3)), b(default_world_spec(3));
  for (int t = 0; t < a.num_tasks(); ++t) {
    ASSERT_EQ(a.num_states(t), b.num_states(t));
    for (int s = 0; s < a.num_states(t); ++s) {
      EXPECT_TRUE((a.obs_mean(t, s).array() == b.obs_mean(t, s).array()).all());
      EXPECT_TRUE((a.caption_mean(t, s).array() == b.caption_mean(t, s).array()).all());
    }
  }
}

TEST(BuildWorld, BranchProbabilitiesMustSumToOne) {
  TaskGraph g = branching_task(0.5);
  g.nodes[0].successors[1].prob = 0.4;
  EXPECT_THROW(World(spec_with({g})), ValidationError);
}

TEST(BuildWorld, ActionsMustLieInVocabulary) {
  EXPECT_THROW(World(spec_with({linear_task("t", {0, 6})})), ValidationError);
}

TEST(SampleVideo, ZeroNoiseLinearTaskReproducesMeans) {
  World w(spec_with({linear_task("line", {4, 2, 0, 1, 3})}));
  const VideoRecord v = sample_video(w, 7);
  EXPECT_EQ(v.actions, (ActionSequence{4, 2, 0, 1, 3}));
  ASSERT_EQ(v.state_obs.size(), 6u);
  ASSERT_EQ(v.state_caption_embs.size(), 6u);
  for (std::size_t s = 0; s < v.state_obs.size(); ++s) {
    EXPECT_TRUE((v.state_obs[s].array() == w.obs_mean(0, static_cast<int>(s)).array()).all());
  }
}

TEST(SampleVideo, BranchFrequenciesMatchProbabilities) {
  World w(spec_with({branching_task(0.5)}));
  int first = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    if (sample_video(w, static_cast<std::uint64_t>(i)).actions[1] == 1) ++first;
  }
  EXPECT_NEAR(static_cast<double>(first) / n, 0.5, 0.02);
}

TEST(SampleVideo, RepeatableForFixedSeed) {
  World w(default_world_spec(1));
  const VideoRecord a = sample_video(w, 42), b = sample_video(w, 42);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.task_id, b.task_id);
  for (std::size_t s = 0; s < a.state_obs.size(); ++s) {
    EXPECT_TRUE((a.state_obs[s].array() == b.state_obs[s].array()).all());
    EXPECT_TRUE((a.state_caption_embs[s].array() == b.state_caption_embs[s].array()).all());
  }
}

TEST(SampleVideo, CaptionIdentityCoordinatesFollowInformativeness) {
  WorldSpec s = spec_with({linear_task("a", {0, 1, 2}), linear_task("b", {3, 4, 5})}, 0.0, 10);
  s.caption_informativeness = 0.25;
  World w(s);
  EXPECT_EQ(w.identity_dims(), 3);  // ceil(0.25 * 10)
  for (int st = 0; st < w.num_states(0); ++st) {
    EXPECT_EQ(w.caption_mean(0, st).head(3), w.caption_mean(0, 0).head(3));
  }
}

TEST(SampleVideo, FullyInformativeCaptionsIdentifyTheTask) {
  WorldSpec s = spec_with({linear_task("a", {0, 1, 2}), linear_task("b", {3, 4, 5})}, 0.0, 32);
  s.caption_informativeness = 1.0;
  World w(s);
  // Same task: identical captions in every state. Different tasks: differ on
  // the identity coordinates.
  for (int st = 1; st < w.num_states(0); ++st) {
    EXPECT_EQ(w.caption_mean(0, st), w.caption_mean(0, 0));
  }
  EXPECT_NE(w.caption_mean(0, 0), w.caption_mean(1, 0));
}

TEST(SampleVideo, SharedObservationsCarryNoTaskIdentity) {
  WorldSpec s = spec_with({linear_task("a", {0, 1, 2}), linear_task("b", {3, 4, 5})}, 0.0);
  s.shared_observations = true;
  World w(s);
  for (int st = 0; st < w.num_states(0); ++st) EXPECT_EQ(w.obs_mean(0, st), w.obs_mean(1, st));
}

VideoRecord video_of_length(int length) {
  VideoRecord v;
  v.video_id = "v";
  v.task_id = "t";
  for (int i = 0; i < length; ++i) v.actions.push_back(i % 3);
  for (int i = 0; i <= length; ++i) {
    v.states.push_back(i);
    v.state_obs.push_back(Vector::Constant(2, i));
    v.state_caption_embs.push_back(Vector::Constant(2, 10 + i));
  }
  return v;
}

TEST(CurateWindows, StrideOneCount) {
  const Curation c = curate_windows(video_of_length(5), 3);
  ASSERT_EQ(c.windows.size(), 3u);
  EXPECT_FALSE(c.too_short);
  const PlanWindow& w = c.windows[1];
  EXPECT_EQ(w.actions, (ActionSequence{1, 2, 0}));
  EXPECT_EQ(w.start_obs, Vector::Constant(2, 1));  // state before action 1
  EXPECT_EQ(w.goal_obs, Vector::Constant(2, 4));   // state after action 3
  EXPECT_EQ(w.start_caption_emb, Vector::Constant(2, 11));
  EXPECT_EQ(w.goal_caption_emb, Vector::Constant(2, 14));
  EXPECT_EQ(w.start_state, 1);
  EXPECT_EQ(w.goal_state, 4);
}

TEST(CurateWindows, ExactLengthGivesOneWindow) {
  const Curation c = curate_windows(video_of_length(3), 3);
  ASSERT_EQ(c.windows.size(), 1u);
  EXPECT_EQ(c.windows[0].actions, (ActionSequence{0, 1, 2}));
}

TEST(CurateWindows, ShortVideoIsFlaggedNotAnError) {
  const Curation c = curate_windows(video_of_length(2), 3);
  EXPECT_TRUE(c.windows.empty());
  EXPECT_TRUE(c.too_short);
}

std::map<std::string, std::vector<PlanWindow>> videos(int n) {
  std::map<std::string, std::vector<PlanWindow>> out;
  for (int i = 0; i < n; ++i) {
    PlanWindow w;
    w.source_video_id = "vid" + std::to_string(i);
    w.horizon = 1;
    w.actions = {0};
    out[w.source_video_id] = {w, w};
  }
  return out;
}

std::set<std::string> ids(const std::vector<PlanWindow>& ws) {
  std::set<std::string> s;
  for (const auto& w : ws) s.insert(w.source_video_id);
  return s;
}

TEST(SplitDataset, HundredVideos) {
  const DatasetSplit s = split_dataset(videos(100), 5);
  EXPECT_EQ(ids(s.train).size(), 56u);
  EXPECT_EQ(ids(s.val).size(), 14u);
  EXPECT_EQ(ids(s.test).size(), 30u);
  EXPECT_EQ(s.train.size(), 112u);  // windows travel with their video
}

TEST(SplitDataset, TenVideosFloorRule) {
  const SplitCounts c = split_counts(10);
  EXPECT_EQ(c.train, 6);
  EXPECT_EQ(c.val, 1);
  EXPECT_EQ(c.test, 3);
  const DatasetSplit s = split_dataset(videos(10), 5);
  EXPECT_EQ(ids(s.train).size(), 6u);
  EXPECT_EQ(ids(s.val).size(), 1u);
  EXPECT_EQ(ids(s.test).size(), 3u);
}

TEST(SplitDataset, DeterministicAndDisjoint) {
  const DatasetSplit a = split_dataset(videos(40), 9), b = split_dataset(videos(40), 9);
  EXPECT_EQ(a, b);
  const auto tr = ids(a.train), va = ids(a.val), te = ids(a.test);
  for (const auto& id : te) {
    EXPECT_FALSE(tr.count(id));
    EXPECT_FALSE(va.count(id));
  }
  for (const auto& id : va) EXPECT_FALSE(tr.count(id));
  EXPECT_NE(ids(split_dataset(videos(40), 10).test), te);
}

TEST(SplitDataset, NeedsThreeVideos) {
  EXPECT_THROW(split_dataset(videos(2), 1), ValidationError);
}

TEST(GtPlanDistribution, LinearTaskHasOnePlan) {
  World w(spec_with({linear_task("line", {4, 2, 0, 1})}));
  const auto d = gt_plan_distribution(w, 0, 0, 3, 3);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.begin()->first, (ActionSequence{4, 2, 0}));
  EXPECT_EQ(d.begin()->second, 1.0);
}

TEST(GtPlanDistribution, EvenBranchSplitsProbability) {
  World w(spec_with({branching_task(0.5)}));
  const auto d = gt_plan_distribution(w, 0, 0, state_after(3), 3);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_DOUBLE_EQ(d.at({0, 1, 3}), 0.5);
  EXPECT_DOUBLE_EQ(d.at({0, 2, 3}), 0.5);
}

TEST(GtPlanDistribution, UnevenBranch) {
  World w(spec_with({branching_task(0.7)}));
  const auto d = gt_plan_distribution(w, 0, 0, state_after(3), 3);
  EXPECT_NEAR(d.at({0, 1, 3}), 0.7, 1e-12);
  EXPECT_NEAR(d.at({0, 2, 3}), 0.3, 1e-12);
}

TEST(GtPlanDistribution, GoalConditioningRenormalizes) {
  World w(spec_with({branching_task(0.7)}));
  // Ending right after node 2 forces the 0.3 branch.
  const auto d = gt_plan_distribution(w, 0, 0, state_after(2), 2);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.at({0, 2}), 1.0);
}

TEST(GtPlanDistribution, UnreachableGoal) {
  World w(spec_with({branching_task(0.7)}));
  try {
    gt_plan_distribution(w, 0, 0, state_after(1), 3);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("unreachable goal"), std::string::npos);
  }
}

TEST(GtPlanDistribution, SumsToOneAndMatchesSampling) {
  World w(default_world_spec(8));
  const int n = 10000;
  for (int task = 0; task < w.num_tasks(); ++task) {
    const auto d = gt_plan_distribution(w, task, 0, w.num_states(task) - 1, 6);
    double total = 0;
    for (const auto& [_, p] : d) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  // Empirical plan frequencies per task over 10000 videos.
  std::map<std::string, std::map<ActionSequence, int>> counts;
  for (int i = 0; i < n; ++i) {
    const VideoRecord v = sample_video(w, static_cast<std::uint64_t>(i));
    ++counts[v.task_id][v.actions];
  }
  for (const auto& [task_id, plans] : counts) {
    const int t = w.task_index(task_id);
    const auto d = gt_plan_distribution(w, t, 0, w.num_states(t) - 1, 6);
    int total = 0;
    for (const auto& [_, c] : plans) total += c;
    for (const auto& [plan, p] : d) {
      const auto it = plans.find(plan);
      const double freq = it == plans.end() ? 0.0 : static_cast<double>(it->second) / total;
      EXPECT_NEAR(freq, p, 0.02) << task_id;
    }
  }
}

TEST(GenerateDataset, CountsFollowSplitArithmetic) {
  World w(default_world_spec(2));
  const GeneratedDataset g = generate_dataset(w, 20, {3}, 4);
  // 6-action videos give 4 windows each at T=3.
  EXPECT_EQ(g.split.train.size(), 4u * split_counts(20).train);
  EXPECT_EQ(g.split.val.size(), 4u * split_counts(20).val);
  EXPECT_EQ(g.split.test.size(), 4u * split_counts(20).test);
  EXPECT_EQ(g.skipped_short, 0);
}

}  // namespace
}  // namespace capplan::world
