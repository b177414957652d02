#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to Var handles. backward() on a 1x1
// result walks the tape in reverse and accumulates gradients. A tape built
// with record_gradients=false only evaluates values and keeps no closures,
// which is what inference uses.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace capplan::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool record_gradients = true)
      : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  // A value that never receives gradient.
  Var constant(Matrix value);
  // A gradient-tracked input whose storage lives outside the tape. The
  // referenced matrix must outlive the tape and stay unmodified while in use.
  Var leaf(const Matrix& external);

  const Matrix& value(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Gradient of the last backward() target with respect to var. Returns a
  // zero matrix of the right shape if no gradient reached it.
  Matrix grad(const Var& var) const;

  void backward(const Var& scalar);

  // Used by op implementations.
  Var push(Matrix value, std::span<const Var> inputs, BackwardFn backward);
  Matrix& grad_ref(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

// --- elementwise / linear algebra -------------------------------------------
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
// Adds a 1 x C row vector to every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double factor);
// alpha * a + beta, elementwise.
Var affine(const Var& a, double alpha, double beta);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var transpose(const Var& a);
Var sum(const Var& a);

// Dense layer: x * w + b (b is 1 x out).
Var linear(const Var& x, const Var& w, const Var& b);

// --- shape --------------------------------------------------------------------
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::vector<Eigen::Index> indices);
// out has total_rows rows; src row i is added into out row dest_rows[i].
Var scatter_add_rows(const Var& src, std::vector<Eigen::Index> dest_rows,
                     Eigen::Index total_rows);
// (G*g) x C  ->  G x (g*C): consecutive groups of g rows flattened row-major.
Var fold_rows(const Var& a, Eigen::Index group);

// --- normalization ------------------------------------------------------------
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps);
// Each row divided by max(||row||, floor).
Var l2_normalize_rows(const Var& x, double floor);
Var softmax_rows(const Var& x);

// --- attention ----------------------------------------------------------------
struct AttentionLayout {
  int heads = 1;
  // Number of independent sequences stacked in q.
  Eigen::Index groups = 1;
  // True when every group attends to the same k/v rows (e.g. a memory bank).
  // Otherwise k/v are stacked per group like q.
  bool shared_kv = false;
};
// Scaled dot-product attention over already-projected q, k, v.
Var attention(const Var& q, const Var& k, const Var& v,
              const AttentionLayout& layout);

// --- losses -------------------------------------------------------------------
// Sum over rows r of -log softmax(logits_r)[targets[r]]. When mask is given,
// columns with mask(r, c) == false are excluded from row r's softmax; the
// target column must be allowed.
Var softmax_cross_entropy(const Var& logits,
                          const std::vector<Eigen::Index>& targets,
                          const std::optional<Eigen::Array<bool, Eigen::Dynamic,
                                                           Eigen::Dynamic>>&
                              mask = std::nullopt);
// Elementwise log(clamp(a, lo, hi)); gradient is zero where clamping is active.
Var log_clamped(const Var& a, double lo, double hi);

}  // namespace capplan::ad
