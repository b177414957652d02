#include "capplan/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace capplan::io {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "capplan-dataset";
constexpr int kVersion = 1;

void append_reals(std::string& out, const Vector& v) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += format_real(v(i));
  }
  out += ']';
}

void append_string(std::string& out, const std::string& s) {
  out += json(s).dump();
}

std::string window_line(const PlanWindow& w, const char* split) {
  std::string line = "{\"split\":\"";
  line += split;
  line += "\",\"video_id\":";
  append_string(line, w.source_video_id);
  line += ",\"task_id\":";
  if (w.task_id) append_string(line, *w.task_id); else line += "null";
  line += fmt::format(",\"horizon\":{},\"actions\":[", w.horizon);
  for (std::size_t i = 0; i < w.actions.size(); ++i) {
    if (i > 0) line += ',';
    line += std::to_string(w.actions[i]);
  }
  line += "],\"start_state\":";
  line += w.start_state ? std::to_string(*w.start_state) : "null";
  line += ",\"goal_state\":";
  line += w.goal_state ? std::to_string(*w.goal_state) : "null";
  line += ",\"start_obs\":";
  append_reals(line, w.start_obs);
  line += ",\"goal_obs\":";
  append_reals(line, w.goal_obs);
  line += ",\"start_caption_emb\":";
  append_reals(line, w.start_caption_emb);
  line += ",\"goal_caption_emb\":";
  append_reals(line, w.goal_caption_emb);
  line += '}';
  return line;
}

const json& require(const json& record, const char* field, std::size_t line) {
  auto it = record.find(field);
  if (it == record.end()) throw ParseError(line, field, "missing field");
  return *it;
}

Vector read_reals(const json& record, const char* field, std::size_t line) {
  const json& arr = require(record, field, line);
  if (!arr.is_array()) throw ParseError(line, field, "expected an array of reals");
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) {
      throw ParseError(line, field, fmt::format("element {} is not a number", i));
    }
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return v;
}

std::optional<int> read_optional_int(const json& record, const char* field,
                                     std::size_t line) {
  auto it = record.find(field);
  if (it == record.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw ParseError(line, field, "expected an integer or null");
  return it->get<int>();
}

}  // namespace

std::string format_real(double value) { return fmt::format("{:.17g}", value); }

void write_dataset(const world::DatasetSplit& split, std::ostream& out) {
  out << fmt::format("{{\"format\":\"{}\",\"version\":{},\"split_seed\":{}}}\n",
                     kFormat, kVersion, split.split_seed);
  auto emit = [&](const std::vector<PlanWindow>& windows, const char* name) {
    for (const auto& w : windows) out << window_line(w, name) << '\n';
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");
  if (!out) throw IoError("failed while writing dataset");
}

void write_dataset(const world::DatasetSplit& split,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  write_dataset(split, out);
  out.flush();
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

world::DatasetSplit read_dataset(std::istream& in) {
  world::DatasetSplit split;
  std::string text;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t records = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, "<record>", e.what());
    }
    if (!record.is_object()) throw ParseError(line_no, "<record>", "expected an object");

    if (!header_seen) {
      const json& format = require(record, "format", line_no);
      if (!format.is_string() || format.get<std::string>() != kFormat) {
        throw ParseError(line_no, "format", "not a capplan dataset file");
      }
      const json& version = require(record, "version", line_no);
      if (!version.is_number_integer() || version.get<int>() != kVersion) {
        throw ParseError(line_no, "version", "unsupported version");
      }
      const json& seed = require(record, "split_seed", line_no);
      if (!seed.is_number_unsigned() && !seed.is_number_integer()) {
        throw ParseError(line_no, "split_seed", "expected an integer");
      }
      split.split_seed = seed.get<std::uint64_t>();
      header_seen = true;
      continue;
    }

    try {
      PlanWindow w;
      const json& name = require(record, "split", line_no);
      const json& vid = require(record, "video_id", line_no);
      if (!vid.is_string()) throw ParseError(line_no, "video_id", "expected a string");
      w.source_video_id = vid.get<std::string>();
      if (auto it = record.find("task_id"); it != record.end() && !it->is_null()) {
        if (!it->is_string()) throw ParseError(line_no, "task_id", "expected a string or null");
        w.task_id = it->get<std::string>();
      }
      const json& horizon = require(record, "horizon", line_no);
      if (!horizon.is_number_integer()) throw ParseError(line_no, "horizon", "expected an integer");
      w.horizon = horizon.get<int>();
      const json& actions = require(record, "actions", line_no);
      if (!actions.is_array()) throw ParseError(line_no, "actions", "expected an integer list");
      for (const auto& a : actions) {
        if (!a.is_number_integer()) throw ParseError(line_no, "actions", "expected integers");
        w.actions.push_back(a.get<int>());
      }
      if (static_cast<int>(w.actions.size()) != w.horizon) {
        throw ParseError(line_no, "actions", "length differs from horizon");
      }
      w.start_state = read_optional_int(record, "start_state", line_no);
      w.goal_state = read_optional_int(record, "goal_state", line_no);
      w.start_obs = read_reals(record, "start_obs", line_no);
      w.goal_obs = read_reals(record, "goal_obs", line_no);
      w.start_caption_emb = read_reals(record, "start_caption_emb", line_no);
      w.goal_caption_emb = read_reals(record, "goal_caption_emb", line_no);

      const std::string which = name.is_string() ? name.get<std::string>() : "";
      if (which == "train") split.train.push_back(std::move(w));
      else if (which == "val") split.val.push_back(std::move(w));
      else if (which == "test") split.test.push_back(std::move(w));
      else throw ParseError(line_no, "split", "expected train, val or test");
    } catch (const json::exception& e) {
      throw ParseError(line_no, "<record>", e.what());
    }
    ++records;
  }
  if (records == 0) throw ParseError(line_no, "<file>", "no records");
  return split;
}

world::DatasetSplit read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  return read_dataset(in);
}

}  // namespace capplan::io
