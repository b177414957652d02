#pragma once

// Checkpoint container.
//
// Line 1: JSON header {"format":"capplan-checkpoint","version":1,
//   "config":{...},"epoch":E,"seed":S,"arrays":[{"name","rows","cols"},..],
//   "meta":{...}}
// Then the arrays' doubles, little-endian, column-major, in header order.
// Parameter arrays are named "param/<name>"; optimizer slots
// "opt/<slot>/<name>".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "capplan/model.hpp"

namespace capplan::io {

struct Checkpoint {
  model::ModelState state;
  int epoch = 0;
  std::uint64_t seed = 0;
  // slot -> parameter name -> buffer (e.g. momentum velocities).
  std::map<std::string, model::ParameterSet> optimizer;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Throws ShapeError when any parameter disagrees with the stored config,
// ParseError on a malformed file and IoError when it cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const model::GeneratorConfig& config);
model::GeneratorConfig config_from_json(const std::string& text);

}  // namespace capplan::io
