#include "capplan/core.hpp"

#include <cmath>

#include <fmt/format.h>

namespace capplan {

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error([&] {
        std::string joined;
        for (const auto& v : violations) {
          if (!joined.empty()) joined += "; ";
          joined += v;
        }
        return joined;
      }()),
      violations_(std::move(violations)) {}

ParseError::ParseError(std::size_t line, std::string field,
                       const std::string& detail)
    : Error(fmt::format("line {}: field '{}': {}", line, field, detail)),
      line_(line),
      field_(std::move(field)) {}

NumericError::NumericError(std::string term, const std::string& detail)
    : Error(fmt::format("non-finite {}: {}", term, detail)),
      term_(std::move(term)) {}

ActionVocabulary::ActionVocabulary(std::vector<std::string> names)
    : names_(std::move(names)) {
  if (names_.size() < 2) {
    throw ValidationError(fmt::format(
        "action vocabulary needs at least 2 actions, got {}", names_.size()));
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto [it, inserted] =
        lookup_.emplace(names_[i], static_cast<ActionIndex>(i));
    if (!inserted) {
      throw ValidationError(
          fmt::format("duplicate action name '{}'", names_[i]));
    }
  }
}

ActionVocabulary ActionVocabulary::numbered(int size) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(std::max(size, 0)));
  for (int i = 0; i < size; ++i) names.push_back(fmt::format("a{:02}", i));
  return ActionVocabulary(std::move(names));
}

const std::string& ActionVocabulary::name(ActionIndex index) const {
  if (index < 0 || index >= size()) {
    throw DomainError(fmt::format("action index {} out of range for N={}",
                                  index, size()));
  }
  return names_[static_cast<std::size_t>(index)];
}

ActionIndex ActionVocabulary::index_of(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) {
    throw DomainError(fmt::format("unknown action '{}'", name));
  }
  return it->second;
}

bool is_row_stochastic(const Matrix& m, double tolerance) {
  if (m.rows() == 0 || m.cols() == 0) return false;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
      sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance) return false;
  }
  return true;
}

PlanDistribution::PlanDistribution(Matrix probs) : probs_(std::move(probs)) {
  if (!is_row_stochastic(probs_)) {
    throw ValidationError(fmt::format(
        "plan distribution ({}x{}) is not row-stochastic", probs_.rows(),
        probs_.cols()));
  }
}

TransitionMatrix::TransitionMatrix(Matrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() != probs_.cols()) {
    throw ShapeError(fmt::format("transition matrix must be square, got {}x{}",
                                 probs_.rows(), probs_.cols()));
  }
  if (!is_row_stochastic(probs_) || (probs_.array() <= 0.0).any()) {
    throw ValidationError(
        "transition matrix must be strictly positive and row-stochastic");
  }
}

Vector one_hot(ActionIndex index, int size) {
  if (size < 1 || index < 0 || index >= size) {
    throw DomainError(
        fmt::format("one_hot: index {} out of range for N={}", index, size));
  }
  Vector v = Vector::Zero(size);
  v(index) = 1.0;
  return v;
}

namespace {

bool same_vector(const Vector& a, const Vector& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

void check_vector(const Vector& v, const char* name, int expected_dim,
                  const char* nonfinite_label,
                  std::vector<std::string>& violations) {
  if (v.size() != expected_dim) {
    violations.push_back(fmt::format("{} has dimension {}, expected {}", name,
                                     v.size(), expected_dim));
  }
  if (!v.allFinite()) {
    violations.push_back(fmt::format("{} ({})", nonfinite_label, name));
  }
}

}  // namespace

bool operator==(const PlanWindow& a, const PlanWindow& b) {
  return same_vector(a.start_obs, b.start_obs) &&
         same_vector(a.goal_obs, b.goal_obs) &&
         same_vector(a.start_caption_emb, b.start_caption_emb) &&
         same_vector(a.goal_caption_emb, b.goal_caption_emb) &&
         a.actions == b.actions && a.horizon == b.horizon &&
         a.source_video_id == b.source_video_id && a.task_id == b.task_id &&
         a.start_state == b.start_state && a.goal_state == b.goal_state;
}

const PlanWindow& validate_window(const PlanWindow& window,
                                  const ActionVocabulary& vocab,
                                  int expected_dim) {
  std::vector<std::string> violations;
  check_vector(window.start_obs, "start_obs", expected_dim,
               "non-finite observation", violations);
  check_vector(window.goal_obs, "goal_obs", expected_dim,
               "non-finite observation", violations);
  check_vector(window.start_caption_emb, "start_caption_emb", expected_dim,
               "non-finite caption embedding", violations);
  check_vector(window.goal_caption_emb, "goal_caption_emb", expected_dim,
               "non-finite caption embedding", violations);
  if (window.horizon <= 0) {
    violations.push_back(
        fmt::format("horizon must be positive, got {}", window.horizon));
  }
  if (static_cast<int>(window.actions.size()) != window.horizon) {
    violations.push_back(fmt::format("actions has length {}, horizon is {}",
                                     window.actions.size(), window.horizon));
  }
  for (std::size_t t = 0; t < window.actions.size(); ++t) {
    const ActionIndex a = window.actions[t];
    if (a < 0 || a >= vocab.size()) {
      violations.push_back(fmt::format(
          "action index out of range: actions[{}]={} with N={}", t, a,
          vocab.size()));
    }
  }
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return window;
}

}  // namespace capplan
