#pragma once

// A second, value-only implementation of the generator, critic and losses,
// written directly against Eigen and templated on the scalar type. It shares
// no code with the tape-based model. Gradient checks difference it in long
// double so that roundoff does not swamp small gradients, and tests compare
// it with the tape forward pass in double.

#include <map>
#include <string>

#include <Eigen/Core>

#include "capplan/model.hpp"
#include "capplan/trainer.hpp"

namespace capplan::train {

template <typename S>
class ReferenceModel {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  explicit ReferenceModel(const model::ModelState& state);

  Mat& param(const std::string& name) { return params_.at(name); }
  const Mat& param(const std::string& name) const { return params_.at(name); }

  // (B*T) x N logits.
  Mat logits(const BatchInputs& in) const;
  // (2B) x d unit-norm context tokens, start rows first.
  Mat context(const BatchInputs& in) const;
  // B x 1 critic scores of (B*T) x N sequences.
  Mat critic(const Mat& sequences, int horizon) const;
  // The batch-mean loss term, as train_step defines it.
  S loss(const BatchInputs& in, LossTerm term) const;

 private:
  model::GeneratorConfig config_;
  std::map<std::string, Mat> params_;
};

extern template class ReferenceModel<double>;
extern template class ReferenceModel<long double>;

}  // namespace capplan::train
