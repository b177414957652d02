#include "capplan/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "capplan/errors.hpp"

namespace capplan::ad {

namespace {

using Index = Eigen::Index;
using RowVector = Eigen::RowVectorXd;

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw Error("autodiff: operands belong to different tapes");
  }
}

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(fmt::format("{}: incompatible shapes {}x{} and {}x{}", op,
                                 a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(const Matrix& external) {
  Node node;
  node.external = &external;
  node.needs_grad = recording_;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(int id) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  return node.external != nullptr ? *node.external : node.owned;
}

Matrix& Tape::grad_ref(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() == 0) {
    const Matrix& v = value(id);
    node.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return node.grad;
}

Matrix Tape::grad(const Var& var) const {
  const Node& node = nodes_[static_cast<std::size_t>(var.id())];
  if (node.grad.size() == 0) {
    const Matrix& v = value(var.id());
    return Matrix::Zero(v.rows(), v.cols());
  }
  return node.grad;
}

Var Tape::push(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw Error("autodiff: input from another tape");
      if (needs_grad(in.id())) node.needs_grad = true;
    }
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& scalar) {
  if (!recording_) throw Error("autodiff: backward on a non-recording tape");
  if (scalar.rows() != 1 || scalar.cols() != 1) {
    throw ShapeError("autodiff: backward target must be 1x1");
  }
  for (auto& node : nodes_) node.grad.resize(0, 0);
  grad_ref(scalar.id())(0, 0) = 1.0;
  for (int id = scalar.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.backward && node.grad.size() != 0) node.backward(*this, id);
  }
}

// --- elementwise / linear algebra -------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  const Var inputs[] = {a, b};
  return t.push(std::move(out), inputs, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(),
                b.value());
  const int ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape()->push(a.value() + b.value(), inputs,
                        [ia, ib](Tape& tp, int self) {
                          const Matrix& g = tp.grad_ref(self);
                          if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
                          if (tp.needs_grad(ib)) tp.grad_ref(ib) += g;
                        });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(),
                b.value());
  const int ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape()->push(a.value() - b.value(), inputs,
                        [ia, ib](Tape& tp, int self) {
                          const Matrix& g = tp.grad_ref(self);
                          if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
                          if (tp.needs_grad(ib)) tp.grad_ref(ib) -= g;
                        });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row",
                a.value(), row.value());
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  const Var inputs[] = {a, row};
  return a.tape()->push(std::move(out), inputs, [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.needs_grad(ir)) tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var scale(const Var& a, double factor) { return affine(a, factor, 0.0); }

Var affine(const Var& a, double alpha, double beta) {
  const int ia = a.id();
  Matrix out = (alpha * a.value().array() + beta).matrix();
  const Var inputs[] = {a};
  return a.tape()->push(std::move(out), inputs, [ia, alpha](Tape& tp, int self) {
    tp.grad_ref(ia) += alpha * tp.grad_ref(self);
  });
}

Var relu(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().cwiseMax(0.0);
  const Var inputs[] = {a};
  return a.tape()->push(std::move(out), inputs, [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.grad_ref(ia).array() +=
        (x.array() > 0.0).select(tp.grad_ref(self).array(), 0.0);
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const Var inputs[] = {a};
  return a.tape()->push(std::move(out), inputs, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_ref(ia).array() +=
        tp.grad_ref(self).array() * y.array() * (1.0 - y.array());
  });
}

Var transpose(const Var& a) {
  const int ia = a.id();
  const Var inputs[] = {a};
  return a.tape()->push(a.value().transpose(), inputs,
                        [ia](Tape& tp, int self) {
                          tp.grad_ref(ia) += tp.grad_ref(self).transpose();
                        });
}

Var sum(const Var& a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Var inputs[] = {a};
  return a.tape()->push(std::move(out), inputs, [ia](Tape& tp, int self) {
    tp.grad_ref(ia).array() += tp.grad_ref(self)(0, 0);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return add_row(matmul(x, w), b);
}

// --- shape --------------------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.cols() == cols, "concat_rows", parts.front().value(),
                  p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    spans.emplace_back(p.id(), offset);
    offset += p.rows();
  }
  return parts.front().tape()->push(
      std::move(out), parts, [spans = std::move(spans)](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        for (const auto& [id, off] : spans) {
          if (!tp.needs_grad(id)) continue;
          Matrix& gi = tp.grad_ref(id);
          gi += g.middleRows(off, gi.rows());
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.rows() == rows, "concat_cols", parts.front().value(),
                  p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    spans.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return parts.front().tape()->push(
      std::move(out), parts, [spans = std::move(spans)](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        for (const auto& [id, off] : spans) {
          if (!tp.needs_grad(id)) continue;
          Matrix& gi = tp.grad_ref(id);
          gi += g.middleCols(off, gi.cols());
        }
      });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError(fmt::format("slice_rows: [{}, {}) outside {} rows", start,
                                 start + count, a.rows()));
  }
  const int ia = a.id();
  const Var inputs[] = {a};
  return a.tape()->push(a.value().middleRows(start, count), inputs,
                        [ia, start, count](Tape& tp, int self) {
                          tp.grad_ref(ia).middleRows(start, count) +=
                              tp.grad_ref(self);
                        });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError(fmt::format("slice_cols: [{}, {}) outside {} cols", start,
                                 start + count, a.cols()));
  }
  const int ia = a.id();
  const Var inputs[] = {a};
  return a.tape()->push(a.value().middleCols(start, count), inputs,
                        [ia, start, count](Tape& tp, int self) {
                          tp.grad_ref(ia).middleCols(start, count) +=
                              tp.grad_ref(self);
                        });
}

Var gather_rows(const Var& a, std::vector<Index> indices) {
  const Matrix& src = a.value();
  Matrix out(static_cast<Index>(indices.size()), src.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index r = indices[i];
    if (r < 0 || r >= src.rows()) {
      throw ShapeError(fmt::format("gather_rows: row {} outside {} rows", r,
                                   src.rows()));
    }
    out.row(static_cast<Index>(i)) = src.row(r);
  }
  const int ia = a.id();
  const Var inputs[] = {a};
  return a.tape()->push(
      std::move(out), inputs,
      [ia, indices = std::move(indices)](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t i = 0; i < indices.size(); ++i) {
          ga.row(indices[i]) += g.row(static_cast<Index>(i));
        }
      });
}

Var scatter_add_rows(const Var& src, std::vector<Index> dest_rows,
                     Index total_rows) {
  const Matrix& in = src.value();
  if (static_cast<Index>(dest_rows.size()) != in.rows()) {
    throw ShapeError("scatter_add_rows: one destination per source row");
  }
  Matrix out = Matrix::Zero(total_rows, in.cols());
  for (std::size_t i = 0; i < dest_rows.size(); ++i) {
    const Index r = dest_rows[i];
    if (r < 0 || r >= total_rows) {
      throw ShapeError(fmt::format("scatter_add_rows: row {} outside {} rows",
                                   r, total_rows));
    }
    out.row(r) += in.row(static_cast<Index>(i));
  }
  const int is = src.id();
  const Var inputs[] = {src};
  return src.tape()->push(
      std::move(out), inputs,
      [is, dest_rows = std::move(dest_rows)](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        Matrix& gs = tp.grad_ref(is);
        for (std::size_t i = 0; i < dest_rows.size(); ++i) {
          gs.row(static_cast<Index>(i)) += g.row(dest_rows[i]);
        }
      });
}

Var fold_rows(const Var& a, Index group) {
  const Matrix& src = a.value();
  if (group <= 0 || src.rows() % group != 0) {
    throw ShapeError(fmt::format("fold_rows: {} rows not divisible by {}",
                                 src.rows(), group));
  }
  const Index groups = src.rows() / group;
  const Index c = src.cols();
  Matrix out(groups, group * c);
  for (Index gi = 0; gi < groups; ++gi) {
    for (Index j = 0; j < group; ++j) {
      out.block(gi, j * c, 1, c) = src.row(gi * group + j);
    }
  }
  const int ia = a.id();
  const Var inputs[] = {a};
  return a.tape()->push(std::move(out), inputs,
                        [ia, group, groups, c](Tape& tp, int self) {
                          const Matrix& g = tp.grad_ref(self);
                          Matrix& ga = tp.grad_ref(ia);
                          for (Index gi = 0; gi < groups; ++gi) {
                            for (Index j = 0; j < group; ++j) {
                              ga.row(gi * group + j) += g.block(gi, j * c, 1, c);
                            }
                          }
                        });
}

// --- normalization ------------------------------------------------------------

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Matrix& in = x.value();
  const Index c = in.cols();
  require_shape(gamma.rows() == 1 && gamma.cols() == c, "layer_norm(gamma)",
                in, gamma.value());
  require_shape(beta.rows() == 1 && beta.cols() == c, "layer_norm(beta)", in,
                beta.value());

  Eigen::VectorXd mean = in.rowwise().mean();
  Matrix centered = in.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(c)) +
       eps)
          .rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array())
                   .rowwise() +
               beta.value().row(0).array();

  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const Var inputs[] = {x, gamma, beta};
  if (!x.tape()->recording()) {
    return x.tape()->push(std::move(out), inputs, nullptr);
  }
  auto saved = std::make_shared<std::pair<Matrix, Eigen::VectorXd>>(
      std::move(xhat), std::move(inv_std));
  return x.tape()->push(
      std::move(out), inputs, [ix, ig, ib, c, saved](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        const Matrix& xh = saved->first;
        const Eigen::VectorXd& inv = saved->second;
        if (tp.needs_grad(ig)) {
          tp.grad_ref(ig) += (g.array() * xh.array()).colwise().sum().matrix();
        }
        if (tp.needs_grad(ib)) tp.grad_ref(ib) += g.colwise().sum();
        if (tp.needs_grad(ix)) {
          Matrix dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
          Eigen::VectorXd sum_d = dxhat.rowwise().sum();
          Eigen::VectorXd sum_dx = (dxhat.array() * xh.array()).rowwise().sum();
          const double cd = static_cast<double>(c);
          Matrix dx = ((cd * dxhat.array()).colwise() - sum_d.array() -
                       xh.array().colwise() * sum_dx.array())
                          .colwise() *
                      (inv.array() / cd);
          tp.grad_ref(ix) += dx;
        }
      });
}

Var l2_normalize_rows(const Var& x, double floor) {
  const Matrix& in = x.value();
  Eigen::VectorXd norms = in.rowwise().norm();
  Eigen::VectorXd denom = norms.cwiseMax(floor);
  Matrix out = in.array().colwise() / denom.array();
  const int ix = x.id();
  const Var inputs[] = {x};
  return x.tape()->push(
      std::move(out), inputs,
      [ix, norms = std::move(norms), denom = std::move(denom), floor](
          Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        const Matrix& y = tp.value(self);
        Matrix& gx = tp.grad_ref(ix);
        for (Index r = 0; r < g.rows(); ++r) {
          if (norms(r) > floor) {
            const double proj = y.row(r).dot(g.row(r));
            gx.row(r) += (g.row(r) - proj * y.row(r)) / norms(r);
          } else {
            gx.row(r) += g.row(r) / denom(r);
          }
        }
      });
}

namespace {

void softmax_rows_inplace(Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

// Backward of y = softmax(x) per row: dx = y * (dy - <dy, y>).
Matrix softmax_backward(const Matrix& y, const Matrix& dy) {
  Eigen::VectorXd dots = (dy.array() * y.array()).rowwise().sum();
  return y.array() * (dy.array().colwise() - dots.array());
}

}  // namespace

Var softmax_rows(const Var& x) {
  Matrix out = x.value();
  softmax_rows_inplace(out);
  const int ix = x.id();
  const Var inputs[] = {x};
  return x.tape()->push(std::move(out), inputs, [ix](Tape& tp, int self) {
    tp.grad_ref(ix) += softmax_backward(tp.value(self), tp.grad_ref(self));
  });
}

// --- attention ----------------------------------------------------------------

Var attention(const Var& q, const Var& k, const Var& v,
              const AttentionLayout& layout) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  const Index d = Q.cols();
  const int heads = layout.heads;
  const Index groups = layout.groups;
  if (heads <= 0 || d % heads != 0 || K.cols() != d || V.cols() != d ||
      K.rows() != V.rows() || groups <= 0 || Q.rows() % groups != 0 ||
      (!layout.shared_kv && K.rows() % groups != 0)) {
    throw ShapeError(fmt::format(
        "attention: q {}x{}, k {}x{}, v {}x{}, heads {}, groups {}", Q.rows(),
        Q.cols(), K.rows(), K.cols(), V.rows(), V.cols(), heads, groups));
  }
  const Index dh = d / heads;
  const Index sq = Q.rows() / groups;
  const Index sk = layout.shared_kv ? K.rows() : K.rows() / groups;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool shared = layout.shared_kv;
  const bool keep = q.tape()->recording();

  Matrix out(Q.rows(), d);
  // Probabilities per (head) when shared, per (group, head) otherwise.
  auto probs = std::make_shared<std::vector<Matrix>>();
  if (shared) {
    for (int h = 0; h < heads; ++h) {
      Matrix s = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
      s *= inv_sqrt;
      softmax_rows_inplace(s);
      out.middleCols(h * dh, dh).noalias() = s * V.middleCols(h * dh, dh);
      if (keep) probs->push_back(std::move(s));
    }
  } else {
    for (Index g = 0; g < groups; ++g) {
      for (int h = 0; h < heads; ++h) {
        Matrix s = Q.block(g * sq, h * dh, sq, dh) *
                   K.block(g * sk, h * dh, sk, dh).transpose();
        s *= inv_sqrt;
        softmax_rows_inplace(s);
        out.block(g * sq, h * dh, sq, dh).noalias() =
            s * V.block(g * sk, h * dh, sk, dh);
        if (keep) probs->push_back(std::move(s));
      }
    }
  }

  const int iq = q.id(), ik = k.id(), iv = v.id();
  const Var inputs[] = {q, k, v};
  return q.tape()->push(
      std::move(out), inputs,
      [=](Tape& tp, int self) {
        const Matrix& G = tp.grad_ref(self);
        const Matrix& Qv = tp.value(iq);
        const Matrix& Kv = tp.value(ik);
        const Matrix& Vv = tp.value(iv);
        const bool gq = tp.needs_grad(iq), gk = tp.needs_grad(ik),
                   gv = tp.needs_grad(iv);
        Matrix dQ = Matrix::Zero(Qv.rows(), Qv.cols());
        Matrix dK = Matrix::Zero(Kv.rows(), Kv.cols());
        Matrix dV = Matrix::Zero(Vv.rows(), Vv.cols());
        auto block_backward = [&](const Matrix& P, Index qr, Index kr,
                                  Index nq, Index nk, Index col) {
          const auto dO = G.block(qr, col, nq, dh);
          const auto Kb = Kv.block(kr, col, nk, dh);
          const auto Vb = Vv.block(kr, col, nk, dh);
          const auto Qb = Qv.block(qr, col, nq, dh);
          if (gv) dV.block(kr, col, nk, dh).noalias() += P.transpose() * dO;
          Matrix dP = dO * Vb.transpose();
          Matrix dS = softmax_backward(P, dP) * inv_sqrt;
          if (gq) dQ.block(qr, col, nq, dh).noalias() += dS * Kb;
          if (gk) dK.block(kr, col, nk, dh).noalias() += dS.transpose() * Qb;
        };
        std::size_t idx = 0;
        if (shared) {
          for (int h = 0; h < heads; ++h) {
            block_backward((*probs)[idx++], 0, 0, Qv.rows(), sk, h * dh);
          }
        } else {
          for (Index g = 0; g < groups; ++g) {
            for (int h = 0; h < heads; ++h) {
              block_backward((*probs)[idx++], g * sq, g * sk, sq, sk, h * dh);
            }
          }
        }
        if (gq) tp.grad_ref(iq) += dQ;
        if (gk) tp.grad_ref(ik) += dK;
        if (gv) tp.grad_ref(iv) += dV;
      });
}

// --- losses -------------------------------------------------------------------

Var softmax_cross_entropy(
    const Var& logits, const std::vector<Index>& targets,
    const std::optional<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>&
        mask) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(targets.size()) != z.rows()) {
    throw ShapeError(fmt::format("cross entropy: {} targets for {} rows",
                                 targets.size(), z.rows()));
  }
  if (mask && (mask->rows() != z.rows() || mask->cols() != z.cols())) {
    throw ShapeError("cross entropy: mask shape mismatch");
  }
  Matrix probs = Matrix::Zero(z.rows(), z.cols());
  double loss = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const Index t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= z.cols() || (mask && !(*mask)(r, t))) {
      throw DomainError(fmt::format("cross entropy: target {} invalid in row {}",
                                    t, r));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < z.cols(); ++c) {
      if (!mask || (*mask)(r, c)) mx = std::max(mx, z(r, c));
    }
    double total = 0.0;
    for (Index c = 0; c < z.cols(); ++c) {
      if (!mask || (*mask)(r, c)) {
        probs(r, c) = std::exp(z(r, c) - mx);
        total += probs(r, c);
      }
    }
    probs.row(r) /= total;
    loss += (mx + std::log(total)) - z(r, t);
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const int il = logits.id();
  const Var inputs[] = {logits};
  return logits.tape()->push(
      std::move(out), inputs,
      [il, targets, probs = std::move(probs)](Tape& tp, int self) {
        const double g = tp.grad_ref(self)(0, 0);
        Matrix& gl = tp.grad_ref(il);
        gl += g * probs;
        for (std::size_t r = 0; r < targets.size(); ++r) {
          gl(static_cast<Index>(r), targets[r]) -= g;
        }
      });
}

Var log_clamped(const Var& a, double lo, double hi) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr(
      [lo, hi](double x) { return std::log(std::clamp(x, lo, hi)); });
  const Var inputs[] = {a};
  return a.tape()->push(std::move(out), inputs, [ia, lo, hi](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    const Matrix& g = tp.grad_ref(self);
    Matrix& gx = tp.grad_ref(ia);
    for (Index i = 0; i < x.size(); ++i) {
      const double xi = x.data()[i];
      if (xi > lo && xi < hi) gx.data()[i] += g.data()[i] / xi;
    }
  });
}

}  // namespace capplan::ad
