#include "cli/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "capplan/errors.hpp"
#include "capplan/random.hpp"

namespace capplan::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(fmt::format("key '{}': cannot parse '{}' as a number", key, text));
  }
  return value;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.values_ = {
      {"seed", "0"},
      // synthetic world
      {"world.tasks", "4"},
      {"world.vocab_size", "12"},
      {"world.obs_dim", "512"},
      {"world.layers", "6"},
      {"world.noise_sigma", "0.1"},
      {"world.caption_informativeness", "1.0"},
      {"world.shared_observations", "false"},
      // dataset
      {"data.path", "capplan_data/dataset.jsonl"},
      {"data.videos", "300"},
      {"data.horizons", "3"},
      // generator
      {"model.embed_hidden", "256"},
      {"model.hidden_dim", "128"},
      {"model.layers", "2"},
      {"model.heads", "8"},
      {"model.memory_entries", "128"},
      {"model.noise_dim", "32"},
      {"model.max_horizon", "6"},
      {"model.ffn_dim", "256"},
      {"model.context_hidden", "256"},
      {"model.critic_hidden", "256,64,32"},
      // training
      {"train.epochs", "200"},
      {"train.initial_lr", "7e-4"},
      {"train.decay_factor", "0.65"},
      {"train.decay_every", "40"},
      {"train.batch_size", "32"},
      {"train.lambda_c", "1.0"},
      {"train.lambda_ca", "1.0"},
      {"train.lambda_adv", "0.1"},
      {"train.critic_steps", "1"},
      {"train.optimizer", "sgd"},
      {"train.momentum", "0.9"},
      {"train.val_samples", "16"},
      {"train.ablate_context", "false"},
      {"train.horizons", ""},
      {"train.checkpoint_dir", "capplan_runs/checkpoints"},
      {"train.curve", "capplan_runs/loss_curve.jsonl"},
      {"train.resume", ""},
      // evaluation and decoding
      {"eval.samples", "1500"},
      {"eval.horizons", ""},
      {"eval.checkpoint", ""},
      {"eval.results", "capplan_runs/results.jsonl"},
      {"eval.world_oracle", "true"},
      {"decode.window", "0"},
      {"decode.out", ""},
      // verification
      {"verify.viterbi_trials", "500"},
      {"verify.random_constructions", "1000"},
      {"verify.metric_datasets", "100"},
  };
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  it->second = value;
}

void RunConfig::define(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError(fmt::format("expected key=value, got '{}'", assignment));
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected key = value", origin, number));
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, number, e.what()));
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config file {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  return it->second;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("key '{}': expected true or false, got '{}'", key, v));
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  }
  return out;
}

world::WorldSpec RunConfig::world_spec() const {
  world::WorldSpec spec = world::default_world_spec(
      derive_seed(get_u64("seed"), {0x776f726c64ULL}), get_int("world.tasks"),
      get_int("world.vocab_size"), get_int("world.obs_dim"), get_int("world.layers"));
  spec.obs_noise_sigma = get_double("world.noise_sigma");
  spec.caption_informativeness = get_double("world.caption_informativeness");
  spec.shared_observations = get_bool("world.shared_observations");
  world::validate(spec);
  return spec;
}

model::GeneratorConfig RunConfig::generator_config() const {
  model::GeneratorConfig c;
  c.input_dim = get_int("world.obs_dim");
  c.vocab_size = get_int("world.vocab_size");
  c.embed_hidden = get_int("model.embed_hidden");
  c.hidden_dim = get_int("model.hidden_dim");
  c.layers = get_int("model.layers");
  c.heads = get_int("model.heads");
  c.memory_entries = get_int("model.memory_entries");
  c.noise_dim = get_int("model.noise_dim");
  c.max_horizon = get_int("model.max_horizon");
  c.ffn_dim = get_int("model.ffn_dim");
  c.context_hidden = get_int("model.context_hidden");
  c.critic.hidden = get_int_list("model.critic_hidden");
  c.validate();
  return c;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.epochs = get_int("train.epochs");
  t.initial_lr = get_double("train.initial_lr");
  t.decay_factor = get_double("train.decay_factor");
  t.decay_every = get_int("train.decay_every");
  t.batch_size = get_int("train.batch_size");
  t.lambda_c = get_double("train.lambda_c");
  t.lambda_ca = get_double("train.lambda_ca");
  t.lambda_adv = get_double("train.lambda_adv");
  t.critic_steps = get_int("train.critic_steps");
  t.optimizer = train::optimizer_from_string(get("train.optimizer"));
  t.momentum = get_double("train.momentum");
  t.val_samples = get_int("train.val_samples");
  t.ablate_context = get_bool("train.ablate_context");
  t.seed = derive_seed(get_u64("seed"), {0x747261696eULL});
  t.validate();
  return t;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += fmt::format("{} = {}\n", k, v);
  return out;
}

}  // namespace capplan::cli
