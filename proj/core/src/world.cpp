#include "capplan/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "capplan/random.hpp"

namespace capplan::world {

namespace {

constexpr double kBranchTolerance = 1e-9;

Vector normal_vector(Rng& rng, int dim, double scale = 1.0) {
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = scale * rng.normal();
  return v;
}

Vector noisy(const Vector& mean, double sigma, Rng& rng) {
  if (sigma == 0.0) return mean;
  Vector v = mean;
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += sigma * rng.normal();
  return v;
}

}  // namespace

void validate(const WorldSpec& spec) {
  std::vector<std::string> v;
  if (spec.tasks.empty()) v.push_back("world needs at least one task");
  if (spec.vocab_size < 1) v.push_back("vocab_size must be positive");
  if (spec.obs_dim < 1) v.push_back("obs_dim must be positive");
  if (!(spec.obs_noise_sigma >= 0.0) || !std::isfinite(spec.obs_noise_sigma)) {
    v.push_back("obs_noise_sigma must be a finite non-negative number");
  }
  if (!(spec.caption_informativeness >= 0.0 &&
        spec.caption_informativeness <= 1.0)) {
    v.push_back("caption_informativeness must lie in [0,1]");
  }
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const TaskGraph& g = spec.tasks[t];
    if (g.nodes.empty()) {
      v.push_back(fmt::format("task {} has no nodes", t));
      continue;
    }
    for (std::size_t n = 0; n < g.nodes.size(); ++n) {
      const TaskNode& node = g.nodes[n];
      if (node.action < 0 || node.action >= spec.vocab_size) {
        v.push_back(fmt::format("task {} node {}: action {} outside N={}", t,
                                n, node.action, spec.vocab_size));
      }
      if (node.successors.empty()) continue;
      double total = 0.0;
      for (const Branch& b : node.successors) {
        if (b.node <= static_cast<int>(n) ||
            b.node >= static_cast<int>(g.nodes.size())) {
          v.push_back(fmt::format(
              "task {} node {}: successor {} must be a later node", t, n,
              b.node));
        }
        if (!(b.prob > 0.0 && b.prob <= 1.0)) {
          v.push_back(fmt::format("task {} node {}: branch probability {}", t,
                                  n, b.prob));
        }
        total += b.prob;
      }
      if (std::abs(total - 1.0) > kBranchTolerance) {
        v.push_back(fmt::format(
            "task {} node {}: branch probabilities sum to {}", t, n, total));
      }
    }
  }
  std::vector<std::string> names;
  for (const auto& g : spec.tasks) names.push_back(g.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    v.push_back("task names must be unique");
  }
  if (!v.empty()) throw ValidationError(std::move(v));
}

WorldSpec default_world_spec(std::uint64_t seed, int num_tasks, int vocab_size,
                             int obs_dim, int layers) {
  if (layers < 3 || vocab_size < layers + 1) {
    throw ValidationError(fmt::format(
        "default world needs layers >= 3 and vocab_size >= layers + 1 (got "
        "{} and {})",
        layers, vocab_size));
  }
  WorldSpec spec;
  spec.vocab_size = vocab_size;
  spec.obs_dim = obs_dim;
  spec.seed = seed;
  Rng rng(derive_seed(seed, {0x67726170ULL}));
  for (int t = 0; t < num_tasks; ++t) {
    // Distinct actions within a task; tasks overlap in the shared vocabulary.
    std::vector<ActionIndex> perm(static_cast<std::size_t>(vocab_size));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    }
    const int branch_layer =
        1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(layers - 2)));

    TaskGraph g;
    g.name = fmt::format("task{:02}", t);
    std::vector<std::vector<int>> layer_nodes;
    std::size_t next_action = 0;
    for (int l = 0; l < layers; ++l) {
      const int width = (l == branch_layer) ? 2 : 1;
      std::vector<int> ids;
      for (int w = 0; w < width; ++w) {
        ids.push_back(static_cast<int>(g.nodes.size()));
        g.nodes.push_back(TaskNode{perm[next_action++], {}});
      }
      layer_nodes.push_back(std::move(ids));
    }
    for (int l = 0; l + 1 < layers; ++l) {
      const auto& next = layer_nodes[static_cast<std::size_t>(l + 1)];
      for (int id : layer_nodes[static_cast<std::size_t>(l)]) {
        auto& succ = g.nodes[static_cast<std::size_t>(id)].successors;
        if (next.size() == 1) {
          succ.push_back({next[0], 1.0});
        } else {
          succ.push_back({next[0], 0.7});
          succ.push_back({next[1], 0.3});
        }
      }
    }
    spec.tasks.push_back(std::move(g));
  }
  return spec;
}

World::World(WorldSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  const int dim = spec_.obs_dim;
  identity_dims_ = static_cast<int>(
      std::ceil(spec_.caption_informativeness * static_cast<double>(dim) - 1e-12));
  identity_dims_ = std::clamp(identity_dims_, 0, dim);

  Rng obs_rng(derive_seed(spec_.seed, {0x6f6273ULL}));
  Rng cap_rng(derive_seed(spec_.seed, {0x636170ULL}));
  Rng code_rng(derive_seed(spec_.seed, {0x636f6465ULL}));

  // Task identity codes: +-1 on the identity coordinates, distinct per task
  // whenever there are enough coordinates to make them distinct.
  std::vector<Vector> codes;
  for (int t = 0; t < num_tasks(); ++t) {
    Vector code(identity_dims_);
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (int i = 0; i < identity_dims_; ++i) {
        code(i) = (code_rng.next() & 1ULL) ? 1.0 : -1.0;
      }
      const bool clash = std::any_of(codes.begin(), codes.end(), [&](const Vector& c) {
        return (c.array() == code.array()).all();
      });
      if (!clash || identity_dims_ == 0) break;
    }
    codes.push_back(code);
  }

  std::size_t max_states = 0;
  for (const auto& g : spec_.tasks) max_states = std::max(max_states, g.nodes.size() + 1);
  std::vector<Vector> shared_obs;
  if (spec_.shared_observations) {
    for (std::size_t s = 0; s < max_states; ++s) shared_obs.push_back(normal_vector(obs_rng, dim));
  }

  for (int t = 0; t < num_tasks(); ++t) {
    TaskMeans means;
    const std::size_t states = task(t).nodes.size() + 1;
    for (std::size_t s = 0; s < states; ++s) {
      means.obs.push_back(spec_.shared_observations ? shared_obs[s]
                                                    : normal_vector(obs_rng, dim));
      Vector cap = normal_vector(cap_rng, dim);
      cap.head(identity_dims_) = codes[static_cast<std::size_t>(t)];
      means.caption.push_back(std::move(cap));
    }
    task_means_.push_back(std::move(means));
  }
}

int World::task_index(const std::string& task_id) const {
  for (int t = 0; t < num_tasks(); ++t) {
    if (task(t).name == task_id) return t;
  }
  throw DomainError(fmt::format("unknown task '{}'", task_id));
}

const Vector& World::obs_mean(int task, int state) const {
  return task_means_.at(static_cast<std::size_t>(task)).obs.at(static_cast<std::size_t>(state));
}

const Vector& World::caption_mean(int task, int state) const {
  return task_means_.at(static_cast<std::size_t>(task)).caption.at(static_cast<std::size_t>(state));
}

VideoRecord sample_video(const World& world, std::uint64_t seed,
                         std::string video_id) {
  Rng rng(derive_seed(seed, {0x766964ULL}));
  const int t = static_cast<int>(
      rng.uniform_index(static_cast<std::uint64_t>(world.num_tasks())));
  const TaskGraph& g = world.task(t);

  VideoRecord video;
  video.video_id = video_id.empty() ? fmt::format("video-{}", seed) : std::move(video_id);
  video.task_id = g.name;
  video.states.push_back(kInitialState);
  int node = 0;
  while (true) {
    const TaskNode& n = g.nodes[static_cast<std::size_t>(node)];
    video.actions.push_back(n.action);
    video.states.push_back(state_after(node));
    if (n.successors.empty()) break;
    const double u = rng.uniform();
    double acc = 0.0;
    int chosen = n.successors.back().node;
    for (const Branch& b : n.successors) {
      acc += b.prob;
      if (u < acc) {
        chosen = b.node;
        break;
      }
    }
    node = chosen;
  }

  const double sigma = world.spec().obs_noise_sigma;
  for (int s : video.states) {
    video.state_obs.push_back(noisy(world.obs_mean(t, s), sigma, rng));
  }
  for (int s : video.states) {
    video.state_caption_embs.push_back(noisy(world.caption_mean(t, s), sigma, rng));
  }
  return video;
}

Curation curate_windows(const VideoRecord& video, int horizon) {
  if (horizon <= 0) {
    throw DomainError(fmt::format("horizon must be positive, got {}", horizon));
  }
  Curation out;
  const int length = static_cast<int>(video.actions.size());
  if (length < horizon) {
    out.too_short = true;
    return out;
  }
  for (int i = 0; i + horizon <= length; ++i) {
    PlanWindow w;
    const auto first = static_cast<std::size_t>(i);
    const auto last = static_cast<std::size_t>(i + horizon);
    w.start_obs = video.state_obs[first];
    w.goal_obs = video.state_obs[last];
    w.start_caption_emb = video.state_caption_embs[first];
    w.goal_caption_emb = video.state_caption_embs[last];
    w.actions.assign(video.actions.begin() + i, video.actions.begin() + i + horizon);
    w.horizon = horizon;
    w.source_video_id = video.video_id;
    w.task_id = video.task_id;
    if (!video.states.empty()) {
      w.start_state = video.states[first];
      w.goal_state = video.states[last];
    }
    out.windows.push_back(std::move(w));
  }
  return out;
}

SplitCounts split_counts(int num_videos, const SplitRatios& ratios) {
  const int pool = static_cast<int>(
      std::floor(ratios.train_pool * static_cast<double>(num_videos) + 1e-9));
  const int val = static_cast<int>(
      std::floor(ratios.val_fraction * static_cast<double>(pool) + 1e-9));
  return SplitCounts{pool - val, val, num_videos - pool};
}

DatasetSplit split_dataset(
    const std::map<std::string, std::vector<PlanWindow>>& windows_by_video,
    std::uint64_t split_seed, const SplitRatios& ratios) {
  const int n = static_cast<int>(windows_by_video.size());
  if (n < 3) {
    throw ValidationError(
        fmt::format("split needs at least 3 distinct videos, got {}", n));
  }
  std::vector<const std::string*> ids;
  for (const auto& [id, _] : windows_by_video) ids.push_back(&id);
  Rng rng(derive_seed(split_seed, {0x73706c6974ULL}));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    std::swap(ids[i], ids[rng.uniform_index(i + 1)]);
  }
  const SplitCounts counts = split_counts(n, ratios);

  DatasetSplit split;
  split.split_seed = split_seed;
  for (int i = 0; i < n; ++i) {
    const auto& windows = windows_by_video.at(*ids[static_cast<std::size_t>(i)]);
    auto& dest = i < counts.test                ? split.test
                 : i < counts.test + counts.val ? split.val
                                                : split.train;
    dest.insert(dest.end(), windows.begin(), windows.end());
  }
  return split;
}

PlanProbabilities gt_plan_distribution(const World& world, int task,
                                       int start_state, int goal_state,
                                       int horizon) {
  const TaskGraph& g = world.task(task);
  const int states = static_cast<int>(g.nodes.size()) + 1;
  if (start_state < 0 || start_state >= states || goal_state < 0 ||
      goal_state >= states || horizon <= 0) {
    throw DomainError(fmt::format(
        "gt_plan_distribution: state {} -> {} with T={} invalid for task {}",
        start_state, goal_state, horizon, g.name));
  }

  PlanProbabilities plans;
  ActionSequence prefix;
  // Depth-first enumeration of node paths; probabilities multiply along the
  // chosen branches.
  auto walk = [&](auto&& self, int state, double prob) -> void {
    if (static_cast<int>(prefix.size()) == horizon) {
      if (state == goal_state) plans[prefix] += prob;
      return;
    }
    std::vector<Branch> next;
    if (state == kInitialState) {
      next.push_back({0, 1.0});
    } else {
      next = g.nodes[static_cast<std::size_t>(state - 1)].successors;
    }
    for (const Branch& b : next) {
      prefix.push_back(g.nodes[static_cast<std::size_t>(b.node)].action);
      self(self, state_after(b.node), prob * b.prob);
      prefix.pop_back();
    }
  };
  walk(walk, start_state, 1.0);

  double total = 0.0;
  for (const auto& [_, p] : plans) total += p;
  if (plans.empty() || total <= 0.0) {
    throw DomainError(fmt::format(
        "unreachable goal: no length-{} path from state {} to state {} in {}",
        horizon, start_state, goal_state, g.name));
  }
  for (auto& [_, p] : plans) p /= total;
  return plans;
}

GeneratedDataset generate_dataset(const World& world, int num_videos,
                                  const std::vector<int>& horizons,
                                  std::uint64_t seed,
                                  const SplitRatios& ratios) {
  GeneratedDataset out;
  out.num_videos = num_videos;
  std::map<std::string, std::vector<PlanWindow>> by_video;
  for (int i = 0; i < num_videos; ++i) {
    const std::string id = fmt::format("vid{:05}", i);
    const VideoRecord video =
        sample_video(world, derive_seed(seed, {0x76ULL, static_cast<std::uint64_t>(i)}), id);
    auto& bucket = by_video[id];
    for (int h : horizons) {
      Curation c = curate_windows(video, h);
      if (c.too_short) ++out.skipped_short;
      bucket.insert(bucket.end(), c.windows.begin(), c.windows.end());
    }
  }
  out.split = split_dataset(by_video, derive_seed(seed, {0x73ULL}), ratios);
  return out;
}

}  // namespace capplan::world
