#include "capplan/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "capplan/random.hpp"

namespace capplan::model {

namespace {

using ad::Var;
using Index = Eigen::Index;
using Shape = std::pair<Index, Index>;

std::string layer_name(int layer, const char* rest) {
  return fmt::format("decoder.{}.{}", layer, rest);
}

void add_linear(std::map<std::string, Shape>& shapes, const std::string& prefix,
                const std::string& w, const std::string& b, Index in, Index out) {
  shapes[prefix + w] = {in, out};
  shapes[prefix + b] = {1, out};
}

void add_attention(std::map<std::string, Shape>& shapes, const std::string& p,
                   Index d) {
  add_linear(shapes, p, "wq", "bq", d, d);
  // No key bias: it shifts every score of a query by the same amount, which
  // softmax ignores, so it would never receive gradient.
  shapes[p + "wk"] = {d, d};
  add_linear(shapes, p, "wv", "bv", d, d);
  add_linear(shapes, p, "wo", "bo", d, d);
}

void add_norm(std::map<std::string, Shape>& shapes, const std::string& p, Index d) {
  shapes[p + "gamma"] = {1, d};
  shapes[p + "beta"] = {1, d};
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf.front() == 'b' || leaf == "beta";
}

Var mlp2(ParamBinder& p, const std::string& prefix, const Var& x) {
  Var h = ad::relu(ad::linear(x, p(prefix + "w0"), p(prefix + "b0")));
  return ad::linear(h, p(prefix + "w1"), p(prefix + "b1"));
}

Var row_vector(ad::Tape& tape, const Vector& v) {
  return tape.constant(v.transpose());
}

void require_dim(const Vector& v, int dim, const char* what) {
  if (v.size() != dim) {
    throw ShapeError(
        fmt::format("{} has dimension {}, expected {}", what, v.size(), dim));
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  std::vector<std::string> v;
  auto positive = [&](int value, const char* name) {
    if (value <= 0) v.push_back(fmt::format("{} must be positive, got {}", name, value));
  };
  positive(input_dim, "input_dim");
  positive(embed_hidden, "embed_hidden");
  positive(hidden_dim, "hidden_dim");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(memory_entries, "memory_entries");
  positive(noise_dim, "noise_dim");
  positive(max_horizon, "max_horizon");
  positive(vocab_size, "vocab_size");
  positive(ffn_dim, "ffn_dim");
  positive(context_hidden, "context_hidden");
  if (heads > 0 && hidden_dim % heads != 0) {
    v.push_back(fmt::format("hidden_dim {} not divisible by heads {}",
                            hidden_dim, heads));
  }
  if (critic.hidden.empty()) v.push_back("critic needs at least one hidden layer");
  for (int h : critic.hidden) positive(h, "critic hidden size");
  if (!v.empty()) throw ValidationError(std::move(v));
}

std::map<std::string, Shape> parameter_shapes(const GeneratorConfig& c) {
  std::map<std::string, Shape> s;
  const Index d = c.hidden_dim;
  add_linear(s, "obs_embed.", "w0", "b0", c.input_dim, c.embed_hidden);
  add_linear(s, "obs_embed.", "w1", "b1", c.embed_hidden, d);
  add_linear(s, "cap_embed.", "w0", "b0", c.input_dim, c.embed_hidden);
  add_linear(s, "cap_embed.", "w1", "b1", c.embed_hidden, d);
  add_linear(s, "context.", "w0", "b0", 2 * c.input_dim, c.context_hidden);
  add_linear(s, "context.", "w1", "b1", c.context_hidden, 2 * d);
  s["queries"] = {c.max_horizon, d};
  add_linear(s, "noise.", "w", "b", c.noise_dim, d);
  s["memory"] = {c.memory_entries, d};
  for (int l = 0; l < c.layers; ++l) {
    add_attention(s, layer_name(l, "self."), d);
    add_norm(s, layer_name(l, "norm1."), d);
    add_attention(s, layer_name(l, "cross."), d);
    s[layer_name(l, "cross.wq_ctx")] = {2 * d, d};
    add_norm(s, layer_name(l, "norm2."), d);
    add_linear(s, layer_name(l, "ffn."), "w0", "b0", d, c.ffn_dim);
    add_linear(s, layer_name(l, "ffn."), "w1", "b1", c.ffn_dim, d);
    add_norm(s, layer_name(l, "norm3."), d);
  }
  add_linear(s, "head.", "w", "b", d, c.vocab_size);
  Index in = static_cast<Index>(c.max_horizon) * c.vocab_size;
  for (std::size_t i = 0; i < c.critic.hidden.size(); ++i) {
    add_linear(s, fmt::format("critic.{}.", i), "w", "b", in, c.critic.hidden[i]);
    in = c.critic.hidden[i];
  }
  add_linear(s, "critic.out.", "w", "b", in, 1);
  return s;
}

bool is_critic_param(const std::string& name) {
  return name.rfind("critic.", 0) == 0;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : params) n += static_cast<std::size_t>(m.size());
  return n;
}

const Matrix& ModelState::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw DomainError(fmt::format("no parameter '{}'", name));
  return it->second;
}

Matrix& ModelState::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw DomainError(fmt::format("no parameter '{}'", name));
  return it->second;
}

ModelState init_parameters(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState state;
  state.config = config;
  Rng rng(derive_seed(seed, {0x696e6974ULL}));
  // std::map iteration order makes the draw order deterministic.
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Matrix m;
    if (ends_with(name, "gamma")) {
      m = Matrix::Ones(shape.first, shape.second);
    } else if (is_bias(name)) {
      m = Matrix::Zero(shape.first, shape.second);
    } else {
      const bool table = name == "queries" || name == "memory";
      const double fan_in = table ? static_cast<double>(config.hidden_dim)
                                  : static_cast<double>(shape.first);
      const double stddev = 1.0 / std::sqrt(fan_in);
      m.resize(shape.first, shape.second);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
    }
    state.params.emplace(name, std::move(m));
  }
  return state;
}

void validate_state(const ModelState& state) {
  state.config.validate();
  std::vector<std::string> v;
  const auto shapes = parameter_shapes(state.config);
  for (const auto& [name, shape] : shapes) {
    auto it = state.params.find(name);
    if (it == state.params.end()) {
      v.push_back(fmt::format("missing parameter '{}'", name));
      continue;
    }
    if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      v.push_back(fmt::format("parameter '{}' is {}x{}, expected {}x{}", name,
                              it->second.rows(), it->second.cols(), shape.first,
                              shape.second));
    }
    if (!it->second.allFinite()) {
      v.push_back(fmt::format("parameter '{}' has non-finite entries", name));
    }
  }
  for (const auto& [name, _] : state.params) {
    if (!shapes.contains(name)) v.push_back(fmt::format("unexpected parameter '{}'", name));
  }
  if (!v.empty()) throw ShapeError(ValidationError(std::move(v)).what());
}

ParamBinder::ParamBinder(ad::Tape& tape, const ModelState& state)
    : tape_(tape), state_(state) {}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(state_.param(name));
  bound_.emplace(name, v);
  return v;
}

ParameterSet ParamBinder::gradients() const {
  ParameterSet grads;
  for (const auto& [name, m] : state_.params) {
    auto it = bound_.find(name);
    grads.emplace(name, it == bound_.end() ? Matrix::Zero(m.rows(), m.cols())
                                           : tape_.grad(it->second));
  }
  return grads;
}

Matrix positional_codes(int horizon, int dim) {
  Matrix pe(horizon, dim);
  for (int t = 0; t < horizon; ++t) {
    const double pos = static_cast<double>(t + 1);
    for (int i = 0; i < dim; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(t, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return pe;
}

// --- tape-level blocks -----------------------------------------------------

Var observation_embedding(ParamBinder& p, const Var& obs) {
  return mlp2(p, "obs_embed.", obs);
}

Var caption_embedding(ParamBinder& p, const Var& captions) {
  return ad::l2_normalize_rows(mlp2(p, "cap_embed.", captions), kNormEpsilon);
}

Var context_tokens(ParamBinder& p, const Var& start_obs, const Var& goal_obs) {
  const Index d = p.state().config.hidden_dim;
  const Var both[] = {start_obs, goal_obs};
  Var out = mlp2(p, "context.", ad::concat_cols(both));
  const Var halves[] = {ad::slice_cols(out, 0, d), ad::slice_cols(out, d, d)};
  return ad::l2_normalize_rows(ad::concat_rows(halves), kNormEpsilon);
}

Var queries(ParamBinder& p, int batch, int horizon, const Var& start_emb,
            const Var& goal_emb, const Var& noise) {
  const GeneratorConfig& c = p.state().config;
  if (horizon < 1 || horizon > c.max_horizon) {
    throw DomainError(fmt::format("horizon {} outside [1, {}]", horizon, c.max_horizon));
  }
  ad::Tape& tape = p.tape();
  const Index rows = static_cast<Index>(batch) * horizon;
  std::vector<Index> step_of_row, window_of_row, first_rows, last_rows;
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < horizon; ++t) {
      step_of_row.push_back(t);
      window_of_row.push_back(b);
    }
    first_rows.push_back(b * horizon);
    last_rows.push_back(b * horizon + horizon - 1);
  }
  Var learned = ad::slice_rows(p("queries"), 0, horizon);
  Var base = ad::add(learned, tape.constant(positional_codes(horizon, c.hidden_dim)));
  Var x = ad::gather_rows(base, step_of_row);
  Var z = ad::linear(noise, p("noise.w"), p("noise.b"));
  x = ad::add(x, ad::gather_rows(z, window_of_row));
  x = ad::add(x, ad::scatter_add_rows(start_emb, std::move(first_rows), rows));
  x = ad::add(x, ad::scatter_add_rows(goal_emb, std::move(last_rows), rows));
  return x;
}

Var decode(ParamBinder& p, const Var& queries_in, const Var& memory,
           const Var& context, int batch, int horizon) {
  const GeneratorConfig& c = p.state().config;
  if (queries_in.rows() != static_cast<Index>(batch) * horizon ||
      queries_in.cols() != c.hidden_dim) {
    throw ShapeError(fmt::format("decode: queries {}x{}, expected {}x{}",
                                 queries_in.rows(), queries_in.cols(),
                                 batch * horizon, c.hidden_dim));
  }
  if (memory.cols() != c.hidden_dim) {
    throw ShapeError(fmt::format("decode: memory has {} columns, expected {}",
                                 memory.cols(), c.hidden_dim));
  }
  if (context.valid() && (context.rows() != 2 * static_cast<Index>(batch) ||
                          context.cols() != c.hidden_dim)) {
    throw ShapeError(fmt::format("decode: context {}x{}, expected {}x{}",
                                 context.rows(), context.cols(), 2 * batch,
                                 c.hidden_dim));
  }
  std::vector<Index> window_of_row;
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < horizon; ++t) window_of_row.push_back(b);
  }
  // [c_start | c_goal] per window, B x 2d.
  Var context_pairs;
  if (context.valid()) {
    const Var halves[] = {ad::slice_rows(context, 0, batch),
                          ad::slice_rows(context, batch, batch)};
    context_pairs = ad::concat_cols(halves);
  }

  Var x = queries_in;
  for (int l = 0; l < c.layers; ++l) {
    auto name = [l](const char* rest) { return layer_name(l, rest); };
    {
      Var q = ad::linear(x, p(name("self.wq")), p(name("self.bq")));
      Var k = ad::matmul(x, p(name("self.wk")));
      Var v = ad::linear(x, p(name("self.wv")), p(name("self.bv")));
      Var att = ad::attention(q, k, v, {c.heads, batch, false});
      Var o = ad::linear(att, p(name("self.wo")), p(name("self.bo")));
      x = ad::layer_norm_rows(ad::add(x, o), p(name("norm1.gamma")),
                              p(name("norm1.beta")), kNormEpsilon);
    }
    {
      Var q = ad::linear(x, p(name("cross.wq")), p(name("cross.bq")));
      if (context_pairs.valid()) {
        Var ctx_q = ad::matmul(context_pairs, p(name("cross.wq_ctx")));
        q = ad::add(q, ad::gather_rows(ctx_q, window_of_row));
      }
      Var k = ad::matmul(memory, p(name("cross.wk")));
      Var v = ad::linear(memory, p(name("cross.wv")), p(name("cross.bv")));
      Var att = ad::attention(q, k, v, {c.heads, 1, true});
      Var o = ad::linear(att, p(name("cross.wo")), p(name("cross.bo")));
      x = ad::layer_norm_rows(ad::add(x, o), p(name("norm2.gamma")),
                              p(name("norm2.beta")), kNormEpsilon);
    }
    {
      Var h = ad::relu(ad::linear(x, p(name("ffn.w0")), p(name("ffn.b0"))));
      Var o = ad::linear(h, p(name("ffn.w1")), p(name("ffn.b1")));
      x = ad::layer_norm_rows(ad::add(x, o), p(name("norm3.gamma")),
                              p(name("norm3.beta")), kNormEpsilon);
    }
  }
  return ad::linear(x, p("head.w"), p("head.b"));
}

GeneratorOutputs generator_forward(ParamBinder& p, const GeneratorInputs& in) {
  const GeneratorConfig& c = p.state().config;
  const Index batch = in.start_obs.rows();
  if (batch < 1 || in.goal_obs.rows() != batch || in.noise.rows() != batch ||
      in.start_obs.cols() != c.input_dim || in.goal_obs.cols() != c.input_dim ||
      in.noise.cols() != c.noise_dim) {
    throw ShapeError(fmt::format(
        "generator inputs: start {}x{}, goal {}x{}, noise {}x{} (input_dim {}, "
        "noise_dim {})",
        in.start_obs.rows(), in.start_obs.cols(), in.goal_obs.rows(),
        in.goal_obs.cols(), in.noise.rows(), in.noise.cols(), c.input_dim,
        c.noise_dim));
  }
  ad::Tape& tape = p.tape();
  Var start = tape.constant(in.start_obs);
  Var goal = tape.constant(in.goal_obs);
  Var noise = tape.constant(in.noise);
  Var e_start = observation_embedding(p, start);
  Var e_goal = observation_embedding(p, goal);
  Var ctx = context_tokens(p, start, goal);
  const int b = static_cast<int>(batch);
  Var q = queries(p, b, in.horizon, e_start, e_goal, noise);
  Var logits = decode(p, q, p("memory"), c.use_context ? ctx : Var{}, b, in.horizon);
  return GeneratorOutputs{logits, ctx};
}

Var critic_forward(ParamBinder& p, const Var& sequences, int batch, int horizon) {
  const GeneratorConfig& c = p.state().config;
  if (horizon < 1 || horizon > c.max_horizon ||
      sequences.rows() != static_cast<Index>(batch) * horizon ||
      sequences.cols() != c.vocab_size) {
    throw ShapeError(fmt::format("critic: sequences {}x{} for batch {} horizon {}",
                                 sequences.rows(), sequences.cols(), batch, horizon));
  }
  Var x = ad::fold_rows(sequences, horizon);
  // Shorter horizons use the leading rows of the first projection, which is
  // the same as zero-padding the flattened input to max_horizon * N.
  const Index used = static_cast<Index>(horizon) * c.vocab_size;
  x = ad::linear(x, ad::slice_rows(p("critic.0.w"), 0, used), p("critic.0.b"));
  x = ad::relu(x);
  for (std::size_t i = 1; i < c.critic.hidden.size(); ++i) {
    x = ad::relu(ad::linear(x, p(fmt::format("critic.{}.w", i)),
                            p(fmt::format("critic.{}.b", i))));
  }
  return ad::sigmoid(ad::linear(x, p("critic.out.w"), p("critic.out.b")));
}

// --- single-window wrappers ------------------------------------------------

Vector embed_observation(const ModelState& state, const Vector& obs) {
  require_dim(obs, state.config.input_dim, "observation");
  ad::Tape tape(false);
  ParamBinder p(tape, state);
  return observation_embedding(p, row_vector(tape, obs)).value().row(0).transpose();
}

Vector embed_caption(const ModelState& state, const Vector& caption_emb) {
  require_dim(caption_emb, state.config.input_dim, "caption embedding");
  ad::Tape tape(false);
  ParamBinder p(tape, state);
  return caption_embedding(p, row_vector(tape, caption_emb)).value().row(0).transpose();
}

ContextPair compute_context(const ModelState& state, const Vector& v_start,
                            const Vector& v_goal) {
  require_dim(v_start, state.config.input_dim, "start observation");
  require_dim(v_goal, state.config.input_dim, "goal observation");
  ad::Tape tape(false);
  ParamBinder p(tape, state);
  const Matrix& tokens =
      context_tokens(p, row_vector(tape, v_start), row_vector(tape, v_goal)).value();
  return ContextPair{tokens.row(0).transpose(), tokens.row(1).transpose()};
}

Matrix build_queries(const ModelState& state, int horizon, const Vector& start_emb,
                     const Vector& goal_emb, const Vector& noise) {
  require_dim(start_emb, state.config.hidden_dim, "start embedding");
  require_dim(goal_emb, state.config.hidden_dim, "goal embedding");
  require_dim(noise, state.config.noise_dim, "noise");
  ad::Tape tape(false);
  ParamBinder p(tape, state);
  return queries(p, 1, horizon, row_vector(tape, start_emb),
                 row_vector(tape, goal_emb), row_vector(tape, noise))
      .value();
}

Matrix decoder_forward(const ModelState& state, const Matrix& queries_in,
                       const Matrix& memory,
                       const std::optional<ContextPair>& context) {
  const int horizon = static_cast<int>(queries_in.rows());
  ad::Tape tape(false);
  ParamBinder p(tape, state);
  Var ctx;
  if (context) {
    require_dim(context->start, state.config.hidden_dim, "start context");
    require_dim(context->goal, state.config.hidden_dim, "goal context");
    Matrix m(2, state.config.hidden_dim);
    m.row(0) = context->start.transpose();
    m.row(1) = context->goal.transpose();
    ctx = tape.constant(std::move(m));
  }
  return decode(p, tape.constant(queries_in), tape.constant(memory), ctx, 1, horizon)
      .value();
}

double critic_forward(const ModelState& state, const Matrix& sequence) {
  for (Index r = 0; r < sequence.rows(); ++r) {
    const bool finite = sequence.row(r).allFinite();
    const double minimum = finite ? sequence.row(r).minCoeff() : -1.0;
    if (!finite || minimum < -1e-6 || std::abs(sequence.row(r).sum() - 1.0) > 1e-6) {
      throw ValidationError(
          fmt::format("critic input row {} is not in the probability simplex", r));
    }
  }
  ad::Tape tape(false);
  ParamBinder p(tape, state);
  const int horizon = static_cast<int>(sequence.rows());
  return critic_forward(p, tape.constant(sequence), 1, horizon).value()(0, 0);
}

}  // namespace capplan::model
