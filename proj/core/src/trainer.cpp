#include "capplan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "capplan/dataset_io.hpp"
#include "capplan/infer.hpp"
#include "capplan/losses.hpp"
#include "capplan/random.hpp"

namespace capplan::train {

using ad::Var;

BatchInputs assemble_batch(const model::GeneratorConfig& mc, std::span<const PlanWindow> batch,
                           bool need_captions, std::uint64_t seed) {
  if (batch.empty()) throw DomainError("train_step needs a nonempty batch");
  const int horizon = batch.front().horizon;
  const auto b = static_cast<Eigen::Index>(batch.size());
  BatchInputs t;
  t.horizon = horizon;
  t.start_obs.resize(b, mc.input_dim);
  t.goal_obs.resize(b, mc.input_dim);
  if (need_captions) t.captions.resize(2 * b, mc.input_dim);
  for (Eigen::Index i = 0; i < b; ++i) {
    const PlanWindow& w = batch[static_cast<std::size_t>(i)];
    if (w.horizon != horizon || static_cast<int>(w.actions.size()) != horizon) {
      throw ShapeError("all windows in a batch must share one horizon");
    }
    if (w.start_obs.size() != mc.input_dim || w.goal_obs.size() != mc.input_dim) {
      throw ShapeError(fmt::format("window from {} has observation dim {}, model expects {}",
                                   w.source_video_id, w.start_obs.size(), mc.input_dim));
    }
    t.start_obs.row(i) = w.start_obs.transpose();
    t.goal_obs.row(i) = w.goal_obs.transpose();
    if (need_captions) {
      if (w.start_caption_emb.size() != mc.input_dim || w.goal_caption_emb.size() != mc.input_dim) {
        throw ShapeError(fmt::format("window from {} has caption dim {}, model expects {}",
                                     w.source_video_id, w.start_caption_emb.size(),
                                     mc.input_dim));
      }
      t.captions.row(i) = w.start_caption_emb.transpose();
      t.captions.row(b + i) = w.goal_caption_emb.transpose();
    }
    for (ActionIndex a : w.actions) {
      if (a < 0 || a >= mc.vocab_size) {
        throw DomainError(fmt::format("action {} outside N={}", a, mc.vocab_size));
      }
      t.targets.push_back(a);
    }
    t.actions.push_back(w.actions);
  }
  Rng rng(derive_seed(seed, {0x7a}));
  t.noise.resize(b, mc.noise_dim);
  for (Eigen::Index r = 0; r < t.noise.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.noise.cols(); ++c) t.noise(r, c) = rng.normal();
  }
  return t;
}

namespace {

double scalar(const Var& v) { return v.value()(0, 0); }

void require_finite(double value, const char* term) {
  if (!std::isfinite(value)) {
    throw NumericError(term, fmt::format("loss term {} is {}", term, value));
  }
}

// Generator-side graph for one batch. Critic parameters are bound to the same
// tape, so the adversarial term reads whatever the critic holds when the
// critic forward is built.
struct GeneratorGraph {
  Var logits;
  Var probs;
  Var l_ca;
  std::optional<Var> l_c;
};

GeneratorGraph build_generator(model::ParamBinder& p, const BatchInputs& t, double lambda_c) {
  ad::Tape& tape = p.tape();
  model::GeneratorInputs in{t.start_obs, t.goal_obs, t.noise, t.horizon};
  model::GeneratorOutputs out = model::generator_forward(p, in);
  const double inv_b = 1.0 / static_cast<double>(t.start_obs.rows());
  GeneratorGraph g;
  g.logits = out.logits;
  g.probs = ad::softmax_rows(out.logits);
  g.l_ca = ad::scale(cross_entropy_loss(out.logits, t.targets), inv_b);
  if (lambda_c > 0.0) {
    // Captions enter the graph only here.
    Var caps = model::caption_embedding(p, tape.constant(t.captions));
    g.l_c = ad::scale(contrastive_loss(out.context_tokens, caps), inv_b);
  }
  return g;
}

Var adversarial_loss(model::ParamBinder& p, const GeneratorGraph& g, const BatchInputs& t) {
  Var fake = model::critic_forward(p, g.probs, static_cast<int>(t.start_obs.rows()), t.horizon);
  return generator_adv_loss(fake);
}

Var critic_objective(model::ParamBinder& p, const BatchInputs& t, const Matrix& fake_probs) {
  ad::Tape& tape = p.tape();
  const int b = static_cast<int>(t.start_obs.rows());
  const int n = p.state().config.vocab_size;
  Var real = model::critic_forward(p, tape.constant(one_hot_rows(t.actions, n)), b, t.horizon);
  Var fake = model::critic_forward(p, tape.constant(fake_probs), b, t.horizon);
  return critic_loss(real, fake);
}

void apply_update(model::ModelState& state, OptimizerState& opt, const TrainConfig& cfg,
                  const model::ParameterSet& grads, double lr, bool critic) {
  long& step = critic ? opt.adam_critic_step : opt.adam_step;
  if (cfg.optimizer == OptimizerKind::Adam) ++step;
  for (const auto& [name, g] : grads) {
    if (model::is_critic_param(name) != critic) continue;
    Matrix& w = state.param(name);
    if (cfg.optimizer == OptimizerKind::SgdMomentum) {
      auto& vel = opt.slots["velocity"];
      auto it = vel.find(name);
      if (it == vel.end()) it = vel.emplace(name, Matrix::Zero(w.rows(), w.cols())).first;
      it->second = cfg.momentum * it->second + g;
      w -= lr * it->second;
    } else {
      auto& ms = opt.slots["adam_m"];
      auto& vs = opt.slots["adam_v"];
      auto mi = ms.find(name);
      if (mi == ms.end()) mi = ms.emplace(name, Matrix::Zero(w.rows(), w.cols())).first;
      auto vi = vs.find(name);
      if (vi == vs.end()) vi = vs.emplace(name, Matrix::Zero(w.rows(), w.cols())).first;
      mi->second = cfg.adam_beta1 * mi->second + (1.0 - cfg.adam_beta1) * g;
      vi->second = cfg.adam_beta2 * vi->second + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      w.array() -= lr * (mi->second.array() / c1) /
                   ((vi->second.array() / c2).sqrt() + cfg.adam_epsilon);
    }
    if (!w.allFinite()) {
      throw NumericError("parameters", fmt::format("parameter {} became non-finite", name));
    }
  }
}

}  // namespace

std::string to_string(LossTerm term) {
  switch (term) {
    case LossTerm::Contrastive: return "l_c";
    case LossTerm::CrossEntropy: return "l_ca";
    case LossTerm::GeneratorAdversarial: return "l_gen_adv";
    case LossTerm::Critic: return "l_critic";
  }
  return "unknown";
}

Var build_loss(model::ParamBinder& p, std::span<const PlanWindow> batch,
               std::uint64_t seed, LossTerm term) {
  const bool captions = term == LossTerm::Contrastive;
  const BatchInputs t = assemble_batch(p.state().config, batch, captions, seed);
  if (term == LossTerm::Critic) {
    ad::Tape detached(false);
    model::ParamBinder dp(detached, p.state());
    const Matrix fake = build_generator(dp, t, 0.0).probs.value();
    return critic_objective(p, t, fake);
  }
  GeneratorGraph g = build_generator(p, t, captions ? 1.0 : 0.0);
  if (term == LossTerm::Contrastive) return *g.l_c;
  if (term == LossTerm::CrossEntropy) return g.l_ca;
  return adversarial_loss(p, g, t);
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::SgdMomentum;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError(fmt::format("unknown optimizer '{}' (expected sgd or adam)", name));
}

void TrainConfig::validate() const {
  std::vector<std::string> v;
  if (epochs < 0) v.push_back("epochs must be >= 0");
  if (!(initial_lr >= 0.0)) v.push_back("initial_lr must be >= 0");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) v.push_back("decay_factor must lie in (0,1)");
  if (decay_every < 1) v.push_back("decay_every must be >= 1");
  if (batch_size < 1) v.push_back("batch_size must be >= 1");
  if (!(lambda_c >= 0.0) || !(lambda_ca >= 0.0) || !(lambda_adv >= 0.0)) {
    v.push_back("loss weights must be >= 0");
  }
  if (critic_steps < 0) v.push_back("critic_steps must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) v.push_back("momentum must lie in [0,1)");
  if (val_samples < 1) v.push_back("val_samples must be >= 1");
  if (!v.empty()) throw ValidationError(std::move(v));
}

double learning_rate(const TrainConfig& config, int epoch) {
  if (epoch < 0) throw DomainError("epoch must be >= 0");
  return config.initial_lr * std::pow(config.decay_factor, epoch / config.decay_every);
}

LossBreakdown evaluate_losses(const model::ModelState& state, std::span<const PlanWindow> batch,
                              const TrainConfig& config, std::uint64_t seed) {
  const double lambda_c = config.effective_lambda_c();
  const BatchInputs t = assemble_batch(state.config, batch, lambda_c > 0.0, seed);
  ad::Tape tape(false);
  model::ParamBinder p(tape, state);
  GeneratorGraph g = build_generator(p, t, lambda_c);
  LossBreakdown out;
  out.l_ca = scalar(g.l_ca);
  out.l_c = g.l_c ? scalar(*g.l_c) : 0.0;
  out.l_gen_adv = scalar(adversarial_loss(p, g, t));
  out.l_critic = scalar(critic_objective(p, t, g.probs.value()));
  out.total = config.lambda_ca * out.l_ca + lambda_c * out.l_c + config.lambda_adv * out.l_gen_adv;
  return out;
}

LossBreakdown train_step(TrainerState& state, std::span<const PlanWindow> batch,
                         const TrainConfig& config, double lr, std::uint64_t seed) {
  const double lambda_c = config.effective_lambda_c();
  const BatchInputs t = assemble_batch(state.model.config, batch, lambda_c > 0.0, seed);
  LossBreakdown out;

  ad::Tape gen_tape(true);
  model::ParamBinder gp(gen_tape, state.model);
  GeneratorGraph g = build_generator(gp, t, lambda_c);
  const Matrix fake_probs = g.probs.value();

  // Critic first, on the generator's outputs as constants.
  for (int s = 0; s < config.critic_steps; ++s) {
    ad::Tape tape(true);
    model::ParamBinder p(tape, state.model);
    Var loss = critic_objective(p, t, fake_probs);
    if (s == 0) out.l_critic = scalar(loss);
    require_finite(scalar(loss), "l_critic");
    tape.backward(loss);
    apply_update(state.model, state.optimizer, config, p.gradients(), lr, true);
  }
  if (config.critic_steps == 0) {
    ad::Tape tape(false);
    model::ParamBinder p(tape, state.model);
    out.l_critic = scalar(critic_objective(p, t, fake_probs));
  }

  // Generator against the updated critic.
  Var adv = adversarial_loss(gp, g, t);
  out.l_ca = scalar(g.l_ca);
  out.l_c = g.l_c ? scalar(*g.l_c) : 0.0;
  out.l_gen_adv = scalar(adv);
  require_finite(out.l_ca, "l_ca");
  require_finite(out.l_c, "l_c");
  require_finite(out.l_gen_adv, "l_gen_adv");

  Var total = ad::add(ad::scale(g.l_ca, config.lambda_ca), ad::scale(adv, config.lambda_adv));
  if (g.l_c) total = ad::add(total, ad::scale(*g.l_c, lambda_c));
  out.total = scalar(total);
  require_finite(out.total, "total");
  gen_tape.backward(total);
  apply_update(state.model, state.optimizer, config, gp.gradients(), lr, false);
  return out;
}

std::string format_epoch_record(const EpochRecord& r) {
  return fmt::format(
      "{{\"epoch\":{},\"l_c\":{},\"l_ca\":{},\"l_gen_adv\":{},\"l_critic\":{},\"lr\":{},"
      "\"val_sr\":{}}}",
      r.epoch, io::format_real(r.l_c), io::format_real(r.l_ca), io::format_real(r.l_gen_adv),
      io::format_real(r.l_critic), io::format_real(r.lr), io::format_real(r.val_sr));
}

TransitionMatrix transition_from_windows(std::span<const PlanWindow> windows, int vocab_size) {
  std::vector<ActionSequence> plans;
  plans.reserve(windows.size());
  for (const auto& w : windows) plans.push_back(w.actions);
  return infer::estimate_transition(plans, vocab_size);
}

double validation_success_rate(const model::ModelState& state,
                               std::span<const PlanWindow> windows,
                               const TransitionMatrix& transitions, int samples,
                               std::uint64_t seed) {
  if (windows.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto result = infer::plan(state, windows[i], samples, transitions, seed + i);
    if (result.plan == windows[i].actions) ++hits;
  }
  return 100.0 * hits / static_cast<double>(windows.size());
}

io::Checkpoint make_checkpoint(const TrainerState& state, const TrainConfig& config) {
  io::Checkpoint ck;
  ck.state = state.model;
  ck.epoch = state.epoch;
  ck.seed = config.seed;
  ck.optimizer = state.optimizer.slots;
  ck.meta["optimizer"] = to_string(config.optimizer);
  ck.meta["adam_step"] = std::to_string(state.optimizer.adam_step);
  ck.meta["adam_critic_step"] = std::to_string(state.optimizer.adam_critic_step);
  return ck;
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const PlanWindow> train,
                                                    int batch_size, std::uint64_t seed,
                                                    int epoch) {
  std::map<int, std::vector<std::size_t>> by_horizon;
  for (std::size_t i = 0; i < train.size(); ++i) by_horizon[train[i].horizon].push_back(i);
  Rng rng(derive_seed(seed, {0x6570, static_cast<std::uint64_t>(epoch)}));
  auto shuffle = [&rng](auto& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[rng.uniform_index(i)]);
    }
  };
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [h, idx] : by_horizon) {
    shuffle(idx);
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch_size)) {
      const std::size_t e = std::min(idx.size(), s + static_cast<std::size_t>(batch_size));
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                           idx.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  shuffle(batches);
  return batches;
}

}  // namespace

FitResult fit(const world::DatasetSplit& split, const model::GeneratorConfig& model_config,
              const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (split.train.empty()) throw DomainError("training split is empty");
  if (split.val.empty()) throw DomainError("validation split is empty");

  FitResult result;
  TrainerState& st = result.final_state;
  if (options.resume) {
    const io::Checkpoint& ck = *options.resume;
    if (!(ck.state.config == model_config)) {
      throw ConfigError("resume checkpoint was trained with a different model config");
    }
    st.model = ck.state;
    st.epoch = ck.epoch;
    st.optimizer.slots = ck.optimizer;
    auto meta = [&ck](const char* key, const std::string& fallback) {
      auto it = ck.meta.find(key);
      return it == ck.meta.end() ? fallback : it->second;
    };
    st.optimizer.adam_step = std::stol(meta("adam_step", "0"));
    st.optimizer.adam_critic_step = std::stol(meta("adam_critic_step", "0"));
    result.best_val_sr = std::stod(meta("best_val_sr", "-1"));
    result.best_epoch = std::stoi(meta("best_epoch", "-1"));
    result.best_model = st.model;
    if (options.checkpoint_dir) {
      const auto best_path = *options.checkpoint_dir / "best.ckpt";
      if (std::filesystem::exists(best_path)) result.best_model = io::load_checkpoint(best_path).state;
    }
  } else {
    st.model = model::init_parameters(model_config, derive_seed(config.seed, {0x696e6974}));
  }

  const TransitionMatrix transitions =
      transition_from_windows(split.train, model_config.vocab_size);

  auto save = [&](const std::string& file, const TrainerState& s) {
    io::Checkpoint ck = make_checkpoint(s, config);
    ck.meta["best_val_sr"] = io::format_real(result.best_val_sr);
    ck.meta["best_epoch"] = std::to_string(result.best_epoch);
    std::filesystem::create_directories(*options.checkpoint_dir);
    io::save_checkpoint(ck, *options.checkpoint_dir / file);
  };

  for (int epoch = st.epoch; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    const auto batches = epoch_batches(split.train, config.batch_size, config.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    double weight = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<PlanWindow> batch;
      batch.reserve(batches[bi].size());
      for (std::size_t i : batches[bi]) batch.push_back(split.train[i]);
      const std::uint64_t step_seed = derive_seed(
          config.seed, {0x73746570, static_cast<std::uint64_t>(epoch), bi});
      LossBreakdown l;
      try {
        l = train_step(st, batch, config, lr, step_seed);
      } catch (const NumericError& e) {
        throw NumericError(e.term(), fmt::format("epoch {}: {}", epoch, e.what()));
      }
      const double w = static_cast<double>(batch.size());
      rec.l_c += w * l.l_c;
      rec.l_ca += w * l.l_ca;
      rec.l_gen_adv += w * l.l_gen_adv;
      rec.l_critic += w * l.l_critic;
      weight += w;
    }
    rec.l_c /= weight;
    rec.l_ca /= weight;
    rec.l_gen_adv /= weight;
    rec.l_critic /= weight;
    rec.val_sr = validation_success_rate(st.model, split.val, transitions, config.val_samples,
                                         derive_seed(config.seed, {0x76616c}));
    st.epoch = epoch + 1;
    // Ties go to the later epoch, which has seen more training.
    if (rec.val_sr >= result.best_val_sr) {
      result.best_val_sr = rec.val_sr;
      result.best_epoch = epoch;
      result.best_model = st.model;
      if (options.checkpoint_dir) save("best.ckpt", st);
    }
    if (options.checkpoint_dir) save("last.ckpt", st);
    result.curve.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (result.best_epoch < 0) result.best_model = st.model;
  return result;
}

}  // namespace capplan::train
