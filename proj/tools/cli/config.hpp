#pragma once

// Run configuration: a flat key=value file.
//
//   # comment
//   seed = 7
//   train.epochs = 50
//
// Every key has a default (see RunConfig::defaults). Unknown keys are
// rejected. Later sources override earlier ones:
//   defaults < config file < --define key=value < named flags.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "capplan/model.hpp"
#include "capplan/trainer.hpp"
#include "capplan/world.hpp"

namespace capplan::cli {

class RunConfig {
 public:
  static RunConfig defaults();

  // Throws IoError if unreadable, ConfigError on a malformed line or
  // unknown key.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");
  // Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  // Parses "key=value".
  void define(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // Comma separated; empty string gives an empty list.
  std::vector<int> get_int_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Typed views.
  world::WorldSpec world_spec() const;
  model::GeneratorConfig generator_config() const;
  train::TrainConfig train_config() const;

  // key = value lines in key order.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace capplan::cli
