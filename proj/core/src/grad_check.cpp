#include "capplan/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "capplan/reference.hpp"

namespace capplan::train {

namespace {

constexpr LossTerm kAllTerms[] = {LossTerm::Contrastive, LossTerm::CrossEntropy,
                                  LossTerm::GeneratorAdversarial, LossTerm::Critic};


}  // namespace

model::GeneratorConfig tiny_config() {
  model::GeneratorConfig c;
  c.input_dim = 6;
  c.embed_hidden = 16;
  c.hidden_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.memory_entries = 8;
  c.noise_dim = 3;
  c.max_horizon = 2;
  c.vocab_size = 4;
  c.ffn_dim = 6;
  c.context_hidden = 16;
  c.critic.hidden = {16, 12, 8};
  return c;
}

GradCheckResult grad_check(const model::ModelState& state, std::span<const PlanWindow> batch,
                           std::uint64_t seed, double epsilon, std::span<const LossTerm> terms,
                           const std::optional<GradFault>& fault) {
  if (terms.empty()) terms = kAllTerms;
  model::ModelState work = state;
  // Central differences are taken in extended precision on an independent
  // forward pass, so entries near 1e-8 are not lost to cancellation.
  ReferenceModel<long double> reference(state);
  const long double h = epsilon;
  GradCheckResult result;
  for (LossTerm term : terms) {
    ad::Tape tape(true);
    model::ParamBinder p(tape, work);
    tape.backward(build_loss(p, batch, seed, term));
    model::ParameterSet analytic = p.gradients();

    if (fault && fault->term == term) {
      std::string name = fault->param;
      Eigen::Index r = fault->row, c = fault->col;
      if (name.empty()) {
        double best = -1.0;
        for (const auto& [n, g] : analytic) {
          Eigen::Index rr = 0, cc = 0;
          const double m = g.cwiseAbs().maxCoeff(&rr, &cc);
          if (m > best) {
            best = m;
            name = n;
            r = rr;
            c = cc;
          }
        }
      }
      analytic.at(name)(r, c) *= fault->factor;
    }

    TermCheck check;
    check.term = term;
    const BatchInputs inputs =
        assemble_batch(state.config, batch, term == LossTerm::Contrastive, seed);
    for (const auto& [name, _] : work.params) {
      if (term == LossTerm::Critic && !model::is_critic_param(name)) continue;
      const Matrix& a = analytic.at(name);
      auto& w = reference.param(name);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
          const long double saved = w(r, c);
          w(r, c) = saved + h;
          const long double up = reference.loss(inputs, term);
          w(r, c) = saved - h;
          const long double down = reference.loss(inputs, term);
          w(r, c) = saved;
          const double numeric = static_cast<double>((up - down) / (2.0L * h));
          const double err = std::abs(a(r, c) - numeric) /
                             std::max(1e-8, std::abs(a(r, c)) + std::abs(numeric));
          ++check.entries;
          if (err > check.max_rel_error) {
            check.max_rel_error = err;
            check.worst_param = name;
            check.worst_row = r;
            check.worst_col = c;
          }
        }
      }
    }
    result.max_rel_error = std::max(result.max_rel_error, check.max_rel_error);
    result.terms.push_back(check);
  }
  return result;
}

}  // namespace capplan::train
