#include "capplan/reference.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "capplan/losses.hpp"

namespace capplan::train {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> out = x * w;
  out.rowwise() += b.row(0);
  return out;
}

template <typename S>
Mat<S> relu(const Mat<S>& x) {
  return x.cwiseMax(S(0));
}

template <typename S>
Mat<S> l2_normalize(const Mat<S>& x) {
  Mat<S> out = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S n = std::sqrt(x.row(r).squaredNorm());
    out.row(r) /= std::max(n, S(model::kNormEpsilon));
  }
  return out;
}

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gamma, const Mat<S>& beta) {
  Mat<S> out(x.rows(), x.cols());
  const S c = S(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).sum() / c;
    S var = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= c;
    const S inv = S(1) / std::sqrt(var + S(model::kNormEpsilon));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(r, j) = (x(r, j) - mean) * inv * gamma(0, j) + beta(0, j);
    }
  }
  return out;
}

template <typename S>
void softmax_in_place(Mat<S>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const S m = s.row(r).maxCoeff();
    S total = 0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      s(r, j) = std::exp(s(r, j) - m);
      total += s(r, j);
    }
    s.row(r) /= total;
  }
}

// Multi-head attention. Query rows come in `groups` consecutive blocks; with
// shared keys every block attends to all of k/v, otherwise block g attends to
// block g of k/v.
template <typename S>
Mat<S> attend(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads, Eigen::Index groups,
              bool shared) {
  const Eigen::Index d = q.cols(), dh = d / heads;
  const Eigen::Index sq = q.rows() / groups;
  const Eigen::Index sk = shared ? k.rows() : k.rows() / groups;
  const S scale = S(1) / std::sqrt(S(dh));
  Mat<S> out(q.rows(), d);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const Eigen::Index k0 = shared ? 0 : g * sk;
    for (int h = 0; h < heads; ++h) {
      Mat<S> s = q.block(g * sq, h * dh, sq, dh) * k.block(k0, h * dh, sk, dh).transpose() * scale;
      softmax_in_place(s);
      out.block(g * sq, h * dh, sq, dh) = s * v.block(k0, h * dh, sk, dh);
    }
  }
  return out;
}

template <typename S>
S log_clamped(S x) {
  return std::log(std::clamp(x, S(kProbClamp), S(1) - S(kProbClamp)));
}

// Sum over rows of -log softmax(logits_r)[target_r].
template <typename S>
S cross_entropy(const Mat<S>& logits, const std::vector<Eigen::Index>& targets) {
  S total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    S z = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(r, j) - m);
    total += m + std::log(z) - logits(r, targets[static_cast<std::size_t>(r)]);
  }
  return total;
}

}  // namespace

template <typename S>
ReferenceModel<S>::ReferenceModel(const model::ModelState& state) : config_(state.config) {
  for (const auto& [name, m] : state.params) params_.emplace(name, m.template cast<S>());
}

template <typename S>
typename ReferenceModel<S>::Mat ReferenceModel<S>::context(const BatchInputs& in) const {
  const auto& p = params_;
  const Eigen::Index b = in.start_obs.rows(), d = config_.hidden_dim;
  Mat both(b, 2 * in.start_obs.cols());
  both << in.start_obs.template cast<S>(), in.goal_obs.template cast<S>();
  const Mat out = linear<S>(relu<S>(linear<S>(both, p.at("context.w0"), p.at("context.b0"))),
                            p.at("context.w1"), p.at("context.b1"));
  Mat tokens(2 * b, d);
  tokens.topRows(b) = out.leftCols(d);
  tokens.bottomRows(b) = out.rightCols(d);
  return l2_normalize<S>(tokens);
}

template <typename S>
typename ReferenceModel<S>::Mat ReferenceModel<S>::logits(const BatchInputs& in) const {
  const auto& p = params_;
  const auto& c = config_;
  const Eigen::Index b = in.start_obs.rows();
  const int horizon = in.horizon;
  const Eigen::Index d = c.hidden_dim;
  auto embed = [&p](const Matrix& obs) {
    return linear<S>(relu<S>(linear<S>(obs.template cast<S>(), p.at("obs_embed.w0"),
                                       p.at("obs_embed.b0"))),
                     p.at("obs_embed.w1"), p.at("obs_embed.b1"));
  };
  const Mat e_start = embed(in.start_obs), e_goal = embed(in.goal_obs);
  const Mat z = linear<S>(in.noise.template cast<S>(), p.at("noise.w"), p.at("noise.b"));
  const Mat pe = model::positional_codes(horizon, static_cast<int>(d)).template cast<S>();

  Mat x(b * horizon, d);
  for (Eigen::Index w = 0; w < b; ++w) {
    for (int t = 0; t < horizon; ++t) {
      x.row(w * horizon + t) = p.at("queries").row(t) + pe.row(t) + z.row(w);
    }
    x.row(w * horizon) += e_start.row(w);
    x.row(w * horizon + horizon - 1) += e_goal.row(w);
  }

  Mat ctx_pairs;
  if (c.use_context) {
    const Mat tokens = context(in);
    ctx_pairs.resize(b, 2 * d);
    ctx_pairs << tokens.topRows(b), tokens.bottomRows(b);
  }
  const Mat& memory = p.at("memory");
  for (int l = 0; l < c.layers; ++l) {
    auto P = [&p, l](const char* rest) -> const Mat& {
      return p.at(fmt::format("decoder.{}.{}", l, rest));
    };
    {
      const Mat q = linear<S>(x, P("self.wq"), P("self.bq"));
      const Mat k = x * P("self.wk");
      const Mat v = linear<S>(x, P("self.wv"), P("self.bv"));
      const Mat o = linear<S>(attend<S>(q, k, v, c.heads, b, false), P("self.wo"), P("self.bo"));
      x = layer_norm<S>(x + o, P("norm1.gamma"), P("norm1.beta"));
    }
    {
      Mat q = linear<S>(x, P("cross.wq"), P("cross.bq"));
      if (c.use_context) {
        const Mat cq = ctx_pairs * P("cross.wq_ctx");
        for (Eigen::Index r = 0; r < q.rows(); ++r) q.row(r) += cq.row(r / horizon);
      }
      const Mat k = memory * P("cross.wk");
      const Mat v = linear<S>(memory, P("cross.wv"), P("cross.bv"));
      const Mat o = linear<S>(attend<S>(q, k, v, c.heads, 1, true), P("cross.wo"), P("cross.bo"));
      x = layer_norm<S>(x + o, P("norm2.gamma"), P("norm2.beta"));
    }
    {
      const Mat h = relu<S>(linear<S>(x, P("ffn.w0"), P("ffn.b0")));
      x = layer_norm<S>(x + linear<S>(h, P("ffn.w1"), P("ffn.b1")), P("norm3.gamma"),
                        P("norm3.beta"));
    }
  }
  return linear<S>(x, p.at("head.w"), p.at("head.b"));
}

template <typename S>
typename ReferenceModel<S>::Mat ReferenceModel<S>::critic(const Mat& seqs, int horizon) const {
  const auto& p = params_;
  const Eigen::Index n = seqs.cols();
  const Eigen::Index b = seqs.rows() / horizon;
  Mat flat(b, horizon * n);
  for (Eigen::Index w = 0; w < b; ++w) {
    for (int t = 0; t < horizon; ++t) flat.block(w, t * n, 1, n) = seqs.row(w * horizon + t);
  }
  Mat x = relu<S>(linear<S>(flat, p.at("critic.0.w").topRows(horizon * n), p.at("critic.0.b")));
  for (std::size_t i = 1; i < config_.critic.hidden.size(); ++i) {
    x = relu<S>(linear<S>(x, p.at(fmt::format("critic.{}.w", i)), p.at(fmt::format("critic.{}.b", i))));
  }
  Mat out = linear<S>(x, p.at("critic.out.w"), p.at("critic.out.b"));
  for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, 0) = S(1) / (S(1) + std::exp(-out(r, 0)));
  return out;
}

template <typename S>
S ReferenceModel<S>::loss(const BatchInputs& in, LossTerm term) const {
  const S inv_b = S(1) / S(in.start_obs.rows());
  if (term == LossTerm::Contrastive) {
    const auto& p = params_;
    const Mat caps = l2_normalize<S>(
        linear<S>(relu<S>(linear<S>(in.captions.template cast<S>(), p.at("cap_embed.w0"),
                                    p.at("cap_embed.b0"))),
                  p.at("cap_embed.w1"), p.at("cap_embed.b1")));
    const Mat scores = context(in) * caps.transpose();
    std::vector<Eigen::Index> diag(static_cast<std::size_t>(scores.rows()));
    for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<Eigen::Index>(i);
    return cross_entropy<S>(scores, diag) * inv_b;
  }
  const Mat lg = logits(in);
  if (term == LossTerm::CrossEntropy) return cross_entropy<S>(lg, in.targets) * inv_b;

  Mat probs = lg;
  softmax_in_place(probs);
  if (term == LossTerm::GeneratorAdversarial) {
    const Mat fake = critic(probs, in.horizon);
    S total = 0;
    for (Eigen::Index r = 0; r < fake.rows(); ++r) total += log_clamped(fake(r, 0));
    return -total / S(fake.rows());
  }
  Mat real = Mat::Zero(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < in.targets.size(); ++r) {
    real(static_cast<Eigen::Index>(r), in.targets[r]) = S(1);
  }
  const Mat cr = critic(real, in.horizon), cf = critic(probs, in.horizon);
  S real_term = 0, fake_term = 0;
  for (Eigen::Index r = 0; r < cr.rows(); ++r) {
    real_term += log_clamped(cr(r, 0));
    fake_term += log_clamped(S(1) - cf(r, 0));
  }
  return -(real_term + fake_term) / S(cr.rows());
}

template class ReferenceModel<double>;
template class ReferenceModel<long double>;

}  // namespace capplan::train
