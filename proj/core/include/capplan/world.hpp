#pragma once

// Synthetic instructional-task world: task graphs, observation/caption
// embedding tables, video sampling, window curation, video-level splits and
// an exact plan-distribution oracle.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "capplan/core.hpp"

namespace capplan::world {

struct Branch {
  int node = 0;
  double prob = 1.0;
};

struct TaskNode {
  ActionIndex action = 0;
  // Empty for a leaf. Successor node ids must be greater than this node's id,
  // which keeps every graph acyclic.
  std::vector<Branch> successors;
};

// Node 0 is the root. A video walks root -> leaf.
struct TaskGraph {
  std::string name;
  std::vector<TaskNode> nodes;
};

struct WorldSpec {
  std::vector<TaskGraph> tasks;
  int vocab_size = 12;
  int obs_dim = 512;
  double obs_noise_sigma = 0.1;
  // Fraction of caption coordinates that carry the task identity code.
  double caption_informativeness = 1.0;
  // When set, observation means depend only on the task-local state index,
  // so observations carry no task identity; captions still do.
  bool shared_observations = false;
  std::uint64_t seed = 0;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

// Throws ValidationError listing every violated invariant.
void validate(const WorldSpec& spec);

// The default laboratory world: `num_tasks` layered tasks of `layers` steps
// over a shared vocabulary. Each task has one two-way branch layer whose
// alternatives re-join, so some (start, goal) pairs admit two plans.
WorldSpec default_world_spec(std::uint64_t seed, int num_tasks = 4,
                             int vocab_size = 12, int obs_dim = 512,
                             int layers = 6);

// States of a task: state 0 precedes the root, state v+1 follows node v.
inline int state_after(int node) { return node + 1; }
inline constexpr int kInitialState = 0;

class World {
 public:
  explicit World(WorldSpec spec);

  const WorldSpec& spec() const { return spec_; }
  int num_tasks() const { return spec_.num_tasks(); }
  const TaskGraph& task(int t) const { return spec_.tasks.at(static_cast<std::size_t>(t)); }
  int num_states(int task) const { return static_cast<int>(task_means_.at(static_cast<std::size_t>(task)).obs.size()); }
  int task_index(const std::string& task_id) const;

  const Vector& obs_mean(int task, int state) const;
  const Vector& caption_mean(int task, int state) const;
  // Number of caption coordinates holding the task identity code.
  int identity_dims() const { return identity_dims_; }

 private:
  struct TaskMeans {
    std::vector<Vector> obs;
    std::vector<Vector> caption;
  };

  WorldSpec spec_;
  int identity_dims_ = 0;
  std::vector<TaskMeans> task_means_;
};

struct VideoRecord {
  std::string video_id;
  std::string task_id;
  ActionSequence actions;
  // Task-local state ids, length actions.size() + 1.
  std::vector<int> states;
  std::vector<Vector> state_obs;
  std::vector<Vector> state_caption_embs;
};

VideoRecord sample_video(const World& world, std::uint64_t seed,
                         std::string video_id = {});

struct Curation {
  std::vector<PlanWindow> windows;
  // True when the video was shorter than the horizon and produced nothing.
  bool too_short = false;
};

// Stride-1 windows of length T.
Curation curate_windows(const VideoRecord& video, int horizon);

struct SplitRatios {
  double train_pool = 0.7;
  double val_fraction = 0.2;
};

struct DatasetSplit {
  std::vector<PlanWindow> train;
  std::vector<PlanWindow> val;
  std::vector<PlanWindow> test;
  std::uint64_t split_seed = 0;

  bool operator==(const DatasetSplit&) const = default;
};

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

// Video-level counts for n videos: floor(train_pool * n) videos form the
// pool, floor(val_fraction * pool) of them become validation.
SplitCounts split_counts(int num_videos, const SplitRatios& ratios = {});

// Partitions videos (keys of the map) and carries their windows along.
DatasetSplit split_dataset(
    const std::map<std::string, std::vector<PlanWindow>>& windows_by_video,
    std::uint64_t split_seed, const SplitRatios& ratios = {});

using PlanProbabilities = std::map<ActionSequence, double>;

// Exact distribution over length-T action sequences leaving start_state and
// ending in goal_state.
PlanProbabilities gt_plan_distribution(const World& world, int task,
                                       int start_state, int goal_state,
                                       int horizon);

// Convenience: every video sampled from the world curated at each horizon and
// split. Video i is sampled with a seed derived from (seed, i).
struct GeneratedDataset {
  DatasetSplit split;
  int num_videos = 0;
  int skipped_short = 0;
};
GeneratedDataset generate_dataset(const World& world, int num_videos,
                                  const std::vector<int>& horizons,
                                  std::uint64_t seed,
                                  const SplitRatios& ratios = {});

}  // namespace capplan::world
