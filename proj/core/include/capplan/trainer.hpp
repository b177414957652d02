#pragma once

// Adversarial training of the generator and critic.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capplan/checkpoint.hpp"
#include "capplan/core.hpp"
#include "capplan/model.hpp"
#include "capplan/world.hpp"

namespace capplan::train {

enum class OptimizerKind { SgdMomentum, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 200;
  double initial_lr = 7e-4;
  double decay_factor = 0.65;
  int decay_every = 40;
  int batch_size = 32;
  double lambda_c = 1.0;
  double lambda_ca = 1.0;
  double lambda_adv = 0.1;
  int critic_steps = 1;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  // Drops the caption supervision: lambda_c is treated as 0 and caption
  // embeddings are never read.
  bool ablate_context = false;
  // Samples per window when scoring validation SR for model selection.
  int val_samples = 16;

  // Throws ValidationError.
  void validate() const;
  double effective_lambda_c() const { return ablate_context ? 0.0 : lambda_c; }
};

// lr(e) = initial_lr * decay_factor^floor(e / decay_every).
double learning_rate(const TrainConfig& config, int epoch);

struct LossBreakdown {
  double l_c = 0.0;
  double l_ca = 0.0;
  double l_gen_adv = 0.0;
  double l_critic = 0.0;
  double total = 0.0;
};

// Per-parameter optimizer buffers, keyed by slot ("velocity", "adam_m",
// "adam_v"). Adam's step count is tracked separately.
struct OptimizerState {
  std::map<std::string, model::ParameterSet> slots;
  long adam_step = 0;
  long adam_critic_step = 0;
};

struct TrainerState {
  model::ModelState model;
  OptimizerState optimizer;
  int epoch = 0;  // completed epochs
};

// All windows in a batch must share one horizon. The critic is updated first
// (critic_steps times) on detached generator outputs, then the generator on
// lambda_ca * L_ca + lambda_c * L_c + lambda_adv * L_adv. Losses are averaged
// over the batch. Throws NumericError naming the offending term.
LossBreakdown train_step(TrainerState& state, std::span<const PlanWindow> batch,
                         const TrainConfig& config, double lr, std::uint64_t seed);

// Dense inputs for one batch. Noise rows are drawn from `seed`.
struct BatchInputs {
  Matrix start_obs;  // B x D
  Matrix goal_obs;   // B x D
  Matrix captions;   // 2B x D, start captions then goal captions; empty if unused
  Matrix noise;      // B x noise_dim
  std::vector<Eigen::Index> targets;  // B*T ground truth actions
  std::vector<ActionSequence> actions;
  int horizon = 0;
};

BatchInputs assemble_batch(const model::GeneratorConfig& config,
                           std::span<const PlanWindow> batch, bool need_captions,
                           std::uint64_t seed);

enum class LossTerm { Contrastive, CrossEntropy, GeneratorAdversarial, Critic };

std::string to_string(LossTerm term);

// Builds one loss term on p's tape exactly as train_step computes it (batch
// mean, noise drawn from `seed`). For LossTerm::Critic the generator outputs
// are constants, so only critic parameters receive gradient.
ad::Var build_loss(model::ParamBinder& p, std::span<const PlanWindow> batch,
                   std::uint64_t seed, LossTerm term);

// The same losses without any update, for the noise drawn from `seed`.
LossBreakdown evaluate_losses(const model::ModelState& state,
                              std::span<const PlanWindow> batch,
                              const TrainConfig& config, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double l_c = 0.0;
  double l_ca = 0.0;
  double l_gen_adv = 0.0;
  double l_critic = 0.0;
  double lr = 0.0;
  double val_sr = 0.0;
};

// One line per epoch: {"epoch":..,"l_c":..,"l_ca":..,"l_gen_adv":..,
// "l_critic":..,"lr":..,"val_sr":..}
std::string format_epoch_record(const EpochRecord& record);

struct FitOptions {
  // When set, best.ckpt and last.ckpt are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Continue from this checkpoint (its epoch counts completed epochs).
  std::optional<io::Checkpoint> resume;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  TrainerState final_state;
  model::ModelState best_model;
  int best_epoch = -1;
  double best_val_sr = -1.0;
  std::vector<EpochRecord> curve;
};

FitResult fit(const world::DatasetSplit& split, const model::GeneratorConfig& model_config,
              const TrainConfig& config, const FitOptions& options = {});

// Transition matrix from the action sequences of training windows.
TransitionMatrix transition_from_windows(std::span<const PlanWindow> windows,
                                         int vocab_size);

// Exact-match rate (percent) of decoded plans over windows.
double validation_success_rate(const model::ModelState& state,
                               std::span<const PlanWindow> windows,
                               const TransitionMatrix& transitions, int samples,
                               std::uint64_t seed);

io::Checkpoint make_checkpoint(const TrainerState& state, const TrainConfig& config);

}  // namespace capplan::train
