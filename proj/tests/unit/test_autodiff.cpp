#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "capplan/autodiff.hpp"
#include "capplan/random.hpp"

namespace capplan::ad {
namespace {

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Reduces any output to a scalar with a fixed random weighting so every output
// entry contributes to the checked gradient.
Var weighted_sum(Tape& tape, const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  Var flat = fold_rows(out, out.rows());
  return matmul(flat, tape.constant(random_matrix(rng, flat.cols(), 1)));
}

double evaluate(const Fn& f, const std::vector<Matrix>& inputs) {
  Tape tape(false);
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  return weighted_sum(tape, f(tape, leaves), 99).value()(0, 0);
}

// Max relative error between tape gradients and central differences.
double check(const Fn& f, std::vector<Matrix> inputs) {
  std::vector<Matrix> grads;
  {
    Tape tape(true);
    std::vector<Var> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
    tape.backward(weighted_sum(tape, f(tape, leaves), 99));
    for (const auto& v : leaves) grads.push_back(tape.grad(v));
  }
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + h;
      const double up = evaluate(f, inputs);
      inputs[k].data()[i] = saved - h;
      const double down = evaluate(f, inputs);
      inputs[k].data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[k].data()[i];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max(1e-6, std::abs(analytic) + std::abs(numeric)));
    }
  }
  return worst;
}

constexpr double kTol = 1e-6;

class AutodiffGradients : public ::testing::Test {
 protected:
  Rng rng{2024};
  Matrix m(Eigen::Index r, Eigen::Index c) { return random_matrix(rng, r, c); }
};

TEST_F(AutodiffGradients, Matmul) {
  EXPECT_LT(check([](Tape&, const auto& x) { return matmul(x[0], x[1]); }, {m(3, 4), m(4, 2)}),
            kTol);
}

TEST_F(AutodiffGradients, ElementwiseOps) {
  EXPECT_LT(check([](Tape&, const auto& x) { return sub(add(x[0], x[1]), scale(x[0], 0.3)); },
                  {m(3, 2), m(3, 2)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return affine(sigmoid(x[0]), -2.0, 1.0); }, {m(2, 5)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return add_row(x[0], x[1]); }, {m(4, 3), m(1, 3)}),
            kTol);
}

TEST_F(AutodiffGradients, LinearAndRelu) {
  Matrix x = m(5, 3);
  // Keep pre-activations away from the kink.
  EXPECT_LT(check([](Tape&, const auto& v) { return relu(linear(v[0], v[1], v[2])); },
                  {x, m(3, 4), Matrix::Constant(1, 4, 0.05)}),
            1e-5);
}

TEST_F(AutodiffGradients, ShapeOps) {
  EXPECT_LT(check(
                [](Tape&, const auto& x) {
                  const Var rows[] = {x[0], transpose(x[1])};
                  Var r = concat_rows(rows);
                  const Var cols[] = {slice_cols(r, 1, 2), slice_cols(r, 0, 1)};
                  return slice_rows(concat_cols(cols), 1, 3);
                },
                {m(2, 3), m(3, 3)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return gather_rows(x[0], {2, 0, 2, 1}); }, {m(3, 2)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return scatter_add_rows(x[0], {3, 0, 3}, 4); },
                  {m(3, 2)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return fold_rows(x[0], 3); }, {m(6, 2)}), kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return sum(x[0]); }, {m(3, 3)}), kTol);
}

TEST_F(AutodiffGradients, Normalizations) {
  EXPECT_LT(check([](Tape&, const auto& x) { return layer_norm_rows(x[0], x[1], x[2], 1e-6); },
                  {m(3, 5), m(1, 5), m(1, 5)}),
            1e-5);
  EXPECT_LT(check([](Tape&, const auto& x) { return l2_normalize_rows(x[0], 1e-6); }, {m(4, 3)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return softmax_rows(x[0]); }, {m(3, 4)}), kTol);
}

TEST_F(AutodiffGradients, AttentionGroupedAndShared) {
  EXPECT_LT(check(
                [](Tape&, const auto& x) {
                  return attention(x[0], x[1], x[2], {2, 2, false});
                },
                {m(6, 4), m(6, 4), m(6, 4)}),
            kTol);
  EXPECT_LT(check(
                [](Tape&, const auto& x) {
                  return attention(x[0], x[1], x[2], {2, 1, true});
                },
                {m(5, 4), m(7, 4), m(7, 4)}),
            kTol);
}

TEST_F(AutodiffGradients, CrossEntropyAndClampedLog) {
  EXPECT_LT(check([](Tape&, const auto& x) { return softmax_cross_entropy(x[0], {1, 0, 3}); },
                  {m(3, 4)}),
            kTol);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(2, 3);
  mask << true, false, true, true, true, false;
  EXPECT_LT(check([mask](Tape&, const auto& x) { return softmax_cross_entropy(x[0], {0, 1}, mask); },
                  {m(2, 3)}),
            kTol);
  EXPECT_LT(check([](Tape&, const auto& x) { return log_clamped(sigmoid(x[0]), 1e-7, 1 - 1e-7); },
                  {m(2, 3)}),
            kTol);
}

TEST(Autodiff, AttentionMatchesHandComputation) {
  Rng rng(3);
  Matrix q = random_matrix(rng, 2, 2), k = random_matrix(rng, 3, 2), v = random_matrix(rng, 3, 2);
  Tape tape(false);
  const Matrix out =
      attention(tape.constant(q), tape.constant(k), tape.constant(v), {1, 1, true}).value();
  for (int i = 0; i < 2; ++i) {
    Eigen::RowVectorXd s = q.row(i) * k.transpose() / std::sqrt(2.0);
    s = (s.array() - s.maxCoeff()).exp();
    s /= s.sum();
    EXPECT_TRUE(out.row(i).isApprox(s * v, 1e-12));
  }
}

TEST(Autodiff, LayerNormAndL2Values) {
  Tape tape(false);
  Matrix x(1, 4);
  x << 1, 2, 3, 4;
  const Matrix ln = layer_norm_rows(tape.constant(x), tape.constant(Matrix::Ones(1, 4)),
                                    tape.constant(Matrix::Zero(1, 4)), 0.0)
                        .value();
  EXPECT_NEAR(ln.sum(), 0.0, 1e-12);
  EXPECT_NEAR(ln.squaredNorm() / 4.0, 1.0, 1e-12);
  // Rows shorter than the floor are divided by the floor, so zero stays zero.
  const Matrix z = l2_normalize_rows(tape.constant(Matrix::Zero(1, 3)), 1e-6).value();
  EXPECT_TRUE(z.isZero());
  EXPECT_NEAR(l2_normalize_rows(tape.constant(x), 1e-6).value().norm(), 1.0, 1e-12);
}

TEST(Autodiff, ClampedLogHasZeroGradientWhenClamped) {
  Tape tape(true);
  Matrix a(1, 2);
  a << 0.0, 0.5;
  Var x = tape.leaf(a);
  tape.backward(sum(log_clamped(x, 1e-7, 1 - 1e-7)));
  const Matrix g = tape.grad(x);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_NEAR(g(0, 1), 2.0, 1e-12);
}

TEST(Autodiff, NonRecordingTapeOnlyEvaluates) {
  Tape tape(false);
  Matrix a = Matrix::Ones(2, 2);
  Var x = tape.leaf(a);
  Var y = sum(matmul(x, x));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 8.0);
  EXPECT_FALSE(tape.recording());
}

}  // namespace
}  // namespace capplan::ad
