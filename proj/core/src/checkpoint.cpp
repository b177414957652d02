#include "capplan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

namespace capplan::io {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "capplan-checkpoint";
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

json config_json(const model::GeneratorConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"embed_hidden", c.embed_hidden},
              {"hidden_dim", c.hidden_dim},
              {"layers", c.layers},
              {"heads", c.heads},
              {"memory_entries", c.memory_entries},
              {"noise_dim", c.noise_dim},
              {"max_horizon", c.max_horizon},
              {"vocab_size", c.vocab_size},
              {"ffn_dim", c.ffn_dim},
              {"context_hidden", c.context_hidden},
              {"use_context", c.use_context},
              {"critic_hidden", c.critic.hidden}};
}

model::GeneratorConfig config_from(const json& j) {
  model::GeneratorConfig c;
  try {
    c.input_dim = j.at("input_dim").get<int>();
    c.embed_hidden = j.at("embed_hidden").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.memory_entries = j.at("memory_entries").get<int>();
    c.noise_dim = j.at("noise_dim").get<int>();
    c.max_horizon = j.at("max_horizon").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.context_hidden = j.at("context_hidden").get<int>();
    c.use_context = j.at("use_context").get<bool>();
    c.critic.hidden = j.at("critic_hidden").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError(1, "config", e.what());
  }
  return c;
}

struct ArrayRef {
  std::string name;
  const Matrix* data;
};

}  // namespace

std::string config_to_json(const model::GeneratorConfig& config) {
  return config_json(config).dump();
}

model::GeneratorConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ParseError(1, "config", e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<ArrayRef> arrays;
  for (const auto& [name, m] : ckpt.state.params) arrays.push_back({"param/" + name, &m});
  for (const auto& [slot, set] : ckpt.optimizer) {
    for (const auto& [name, m] : set) arrays.push_back({"opt/" + slot + "/" + name, &m});
  }
  json manifest = json::array();
  for (const auto& a : arrays) {
    manifest.push_back({{"name", a.name}, {"rows", a.data->rows()}, {"cols", a.data->cols()}});
  }
  json header{{"format", kFormat},
              {"version", kVersion},
              {"config", config_json(ckpt.state.config)},
              {"epoch", ckpt.epoch},
              {"seed", ckpt.seed},
              {"arrays", manifest},
              {"meta", ckpt.meta}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << header.dump() << '\n';
  for (const auto& a : arrays) {
    out.write(reinterpret_cast<const char*>(a.data->data()),
              static_cast<std::streamsize>(a.data->size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "<header>", "empty checkpoint");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(1, "<header>", e.what());
  }
  if (!header.is_object() || header.value("format", "") != kFormat) {
    throw ParseError(1, "format", "not a capplan checkpoint");
  }
  if (header.value("version", 0) != kVersion) {
    throw ParseError(1, "version", "unsupported checkpoint version");
  }

  Checkpoint ckpt;
  try {
    ckpt.state.config = config_from(header.at("config"));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    if (header.contains("meta")) {
      ckpt.meta = header.at("meta").get<std::map<std::string, std::string>>();
    }
    for (const auto& entry : header.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw ParseError(1, "arrays", "negative shape");
      Matrix m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw ParseError(1, "arrays", fmt::format("truncated data for '{}'", name));
      if (name.rfind("param/", 0) == 0) {
        ckpt.state.params.emplace(name.substr(6), std::move(m));
      } else if (name.rfind("opt/", 0) == 0) {
        const auto slash = name.find('/', 4);
        if (slash == std::string::npos) throw ParseError(1, "arrays", "bad optimizer slot name");
        ckpt.optimizer[name.substr(4, slash - 4)].emplace(name.substr(slash + 1), std::move(m));
      } else {
        throw ParseError(1, "arrays", fmt::format("unknown array '{}'", name));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(1, "<header>", e.what());
  }
  model::validate_state(ckpt.state);
  for (const auto& [slot, set] : ckpt.optimizer) {
    for (const auto& [name, m] : set) {
      const Matrix& p = ckpt.state.param(name);
      if (p.rows() != m.rows() || p.cols() != m.cols()) {
        throw ShapeError(fmt::format("optimizer slot {} for '{}' has the wrong shape", slot, name));
      }
    }
  }
  return ckpt;
}

}  // namespace capplan::io
