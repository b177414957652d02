#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "capplan/errors.hpp"

namespace capplan {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ActionIndex = int;
using ActionSequence = std::vector<ActionIndex>;

// Row-sum tolerance shared by PlanDistribution and TransitionMatrix.
inline constexpr double kRowSumTolerance = 1e-9;

class ActionVocabulary {
 public:
  explicit ActionVocabulary(std::vector<std::string> names);

  // Vocabulary of generated names "a00", "a01", ...
  static ActionVocabulary numbered(int size);

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(ActionIndex index) const;
  ActionIndex index_of(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, ActionIndex> lookup_;
};

// One curated training/evaluation sample.
//
// task_id, start_state and goal_state are bookkeeping for evaluation
// grouping and the ground-truth oracle. Nothing on the model side reads them.
struct PlanWindow {
  Vector start_obs;
  Vector goal_obs;
  Vector start_caption_emb;
  Vector goal_caption_emb;
  ActionSequence actions;
  int horizon = 0;
  std::string source_video_id;
  std::optional<std::string> task_id;
  std::optional<int> start_state;
  std::optional<int> goal_state;

};

// Exact equality, including dimension mismatches (which compare unequal).
bool operator==(const PlanWindow& a, const PlanWindow& b);

// T x N matrix of per-step marginal action probabilities.
class PlanDistribution {
 public:
  // Throws ValidationError unless every entry is in [0,1] and rows sum to 1.
  explicit PlanDistribution(Matrix probs);

  const Matrix& probs() const { return probs_; }
  int horizon() const { return static_cast<int>(probs_.rows()); }
  int vocab_size() const { return static_cast<int>(probs_.cols()); }

 private:
  Matrix probs_;
};

// N x N row-stochastic matrix with strictly positive entries.
class TransitionMatrix {
 public:
  explicit TransitionMatrix(Matrix probs);

  const Matrix& probs() const { return probs_; }
  int size() const { return static_cast<int>(probs_.rows()); }

 private:
  Matrix probs_;
};

struct MetricReport {
  int horizon = 0;
  double sr = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  double kl = 0.0;
  double nll = 0.0;
  double cosine_distance = 0.0;
  double mode_precision = 0.0;
  double mode_recall = 0.0;
  int num_samples = 0;
  std::uint64_t seed = 0;
  int num_windows = 0;
  int num_groups = 0;
};

Vector one_hot(ActionIndex index, int size);

// Returns the window unchanged if every invariant holds, otherwise throws a
// ValidationError listing all violations found.
const PlanWindow& validate_window(const PlanWindow& window,
                                  const ActionVocabulary& vocab,
                                  int expected_dim);

// Row-sum / range check used after every producing operation.
bool is_row_stochastic(const Matrix& m, double tolerance = kRowSumTolerance);

}  // namespace capplan
