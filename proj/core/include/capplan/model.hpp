#pragma once

// Context-augmented non-autoregressive generator and its critic.
//
// Generator, per window:
//   e_start, e_goal   = ObsEmbed(start_obs), ObsEmbed(goal_obs)
//   [c_start, c_goal] = Context([start_obs, goal_obs]), each row L2-normalized
//   q_t = query[t] + pos(t) + NoiseProj(z), q_1 += e_start, q_T += e_goal
//   2 x { x = LN(x + SelfAttn(x))
//         x = LN(x + CrossAttn(Q = [x | c_start | c_goal], K = V = memory))
//         x = LN(x + FFN(x)) }
//   logits = x * W_head + b_head
// Critic: flattened T x N probabilities -> 256 -> 64 -> 32 -> 1 -> sigmoid.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "capplan/autodiff.hpp"
#include "capplan/core.hpp"

namespace capplan::model {

struct CriticConfig {
  std::vector<int> hidden{256, 64, 32};
  bool operator==(const CriticConfig&) const = default;
};

struct GeneratorConfig {
  int input_dim = 512;
  int embed_hidden = 256;
  int hidden_dim = 128;
  int layers = 2;
  int heads = 8;
  int memory_entries = 128;
  int noise_dim = 32;
  int max_horizon = 6;
  int vocab_size = 12;
  int ffn_dim = 256;
  int context_hidden = 256;
  // false builds the no-context baseline: the cross-attention query sees
  // only the decoder stream.
  bool use_context = true;
  CriticConfig critic;

  // Throws ValidationError.
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

inline constexpr double kNormEpsilon = 1e-6;

// Named parameter arrays in a deterministic (lexicographic) order.
using ParameterSet = std::map<std::string, Matrix>;

struct ModelState {
  GeneratorConfig config;
  ParameterSet params;

  std::size_t parameter_count() const;
  const Matrix& param(const std::string& name) const;
  Matrix& param(const std::string& name);
};

// Expected shape of every parameter for a config.
std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> parameter_shapes(
    const GeneratorConfig& config);

bool is_critic_param(const std::string& name);

// Weights ~ N(0, 1/fan_in), biases 0, layer-norm gains 1. The query table and
// memory bank use the same scheme with fan_in = hidden_dim.
ModelState init_parameters(const GeneratorConfig& config, std::uint64_t seed);

// Checks names, shapes and finiteness against the config.
void validate_state(const ModelState& state);

// Binds parameters of a state to leaves on a tape on first use.
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ModelState& state);

  ad::Var operator()(const std::string& name);
  ad::Tape& tape() { return tape_; }
  const ModelState& state() const { return state_; }

  // Gradients for every parameter (zero where nothing flowed).
  ParameterSet gradients() const;

 private:
  ad::Tape& tape_;
  const ModelState& state_;
  std::map<std::string, ad::Var> bound_;
};

// Batched inputs. Rows are windows.
struct GeneratorInputs {
  Matrix start_obs;  // B x input_dim
  Matrix goal_obs;   // B x input_dim
  Matrix noise;      // B x noise_dim
  int horizon = 0;
};

struct GeneratorOutputs {
  ad::Var logits;          // (B*T) x N, window-major
  ad::Var context_tokens;  // (2B) x d: B start tokens then B goal tokens
};

// --- batched building blocks (tape level) ---------------------------------
ad::Var observation_embedding(ParamBinder& p, const ad::Var& obs);
ad::Var caption_embedding(ParamBinder& p, const ad::Var& captions);
ad::Var context_tokens(ParamBinder& p, const ad::Var& start_obs,
                       const ad::Var& goal_obs);
ad::Var queries(ParamBinder& p, int batch, int horizon, const ad::Var& start_emb,
                const ad::Var& goal_emb, const ad::Var& noise);
// context may be invalid (default Var) for the no-context baseline.
ad::Var decode(ParamBinder& p, const ad::Var& queries, const ad::Var& memory,
               const ad::Var& context, int batch, int horizon);
GeneratorOutputs generator_forward(ParamBinder& p, const GeneratorInputs& in);
// sequences: (B*T) x N rows in the simplex. Returns B x 1 in (0,1).
ad::Var critic_forward(ParamBinder& p, const ad::Var& sequences, int batch,
                       int horizon);

// --- single-window convenience wrappers ------------------------------------
Vector embed_observation(const ModelState& state, const Vector& obs);
Vector embed_caption(const ModelState& state, const Vector& caption_emb);

struct ContextPair {
  Vector start;
  Vector goal;
};
ContextPair compute_context(const ModelState& state, const Vector& v_start,
                            const Vector& v_goal);

// T x d query tokens.
Matrix build_queries(const ModelState& state, int horizon,
                     const Vector& start_emb, const Vector& goal_emb,
                     const Vector& noise);

// T x N logits. Passing std::nullopt for context runs the no-context path.
Matrix decoder_forward(const ModelState& state, const Matrix& queries,
                       const Matrix& memory,
                       const std::optional<ContextPair>& context);

// T x N sequence, rows in the simplex (tolerance 1e-6).
double critic_forward(const ModelState& state, const Matrix& sequence);

// Fixed sinusoidal code for positions 1..T (row t-1 holds position t).
Matrix positional_codes(int horizon, int dim);

}  // namespace capplan::model
