#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "cli/commands.hpp"

namespace capplan::cli {

namespace {

struct SharedFlags {
  std::string config_path;
  std::vector<std::string> defines;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<int> horizons;
  std::optional<int> samples;
  bool ablate_context = false;
  std::optional<std::string> dataset;
  std::optional<std::string> checkpoint;
  std::optional<std::string> resume;
  std::optional<int> window;
  bool inject_fault = false;
};

void add_shared(CLI::App* sub, SharedFlags& f) {
  sub->add_option("--config", f.config_path, "key=value config file");
  sub->add_option("-D,--define", f.defines, "override one config key (key=value)");
  sub->add_option("--seed", f.seed, "global seed");
  sub->add_option("--out", f.out, "output path");
  sub->add_option("--horizon", f.horizons, "horizon T (repeatable)");
  sub->add_option("--samples", f.samples, "samples K per window");
  sub->add_flag("--ablate-context", f.ablate_context, "train without caption supervision");
  sub->add_option("--dataset", f.dataset, "dataset file");
  sub->add_option("--checkpoint", f.checkpoint, "checkpoint file");
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

RunConfig resolve(const std::string& command, const SharedFlags& f) {
  RunConfig c = RunConfig::defaults();
  if (!f.config_path.empty()) c.load_file(f.config_path);
  for (const auto& d : f.defines) c.define(d);
  if (f.seed) c.set("seed", std::to_string(*f.seed));
  if (f.samples) c.set("eval.samples", std::to_string(*f.samples));
  if (f.ablate_context) c.set("train.ablate_context", "true");
  if (f.dataset) c.set("data.path", *f.dataset);
  if (f.checkpoint) c.set("eval.checkpoint", *f.checkpoint);
  if (f.resume) c.set("train.resume", *f.resume);
  if (f.window) c.set("decode.window", std::to_string(*f.window));
  if (!f.horizons.empty()) {
    const char* key = command == "gen-data" ? "data.horizons"
                      : command == "train"  ? "train.horizons"
                                            : "eval.horizons";
    c.set(key, join_ints(f.horizons));
  }
  if (f.out) {
    if (command == "gen-data") c.set("data.path", *f.out);
    else if (command == "train") c.set("train.checkpoint_dir", *f.out);
    else if (command == "eval") c.set("eval.results", *f.out);
    else if (command == "decode") c.set("decode.out", *f.out);
    else throw ConfigError(fmt::format("--out is not used by {}", command));
  }
  return c;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"capplan: caption-context procedure planning"};
  app.require_subcommand(1);
  SharedFlags flags;
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  auto* trn = app.add_subcommand("train", "train the generator and critic");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* dec = app.add_subcommand("decode", "decode a single test window");
  auto* ver = app.add_subcommand("verify", "run the oracle verification suites");
  for (auto* sub : {gen, trn, evl, dec, ver}) add_shared(sub, flags);
  trn->add_option("--resume", flags.resume, "checkpoint to resume from");
  dec->add_option("--window", flags.window, "index into the test windows");
  ver->add_flag("--inject-fault", flags.inject_fault, "corrupt one analytic gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    const RunConfig config = resolve(command, flags);
    if (print_config) {
      out << config.dump();
      return kExitOk;
    }
    if (command == "gen-data") return cmd_gen_data(config, out);
    if (command == "train") return cmd_train(config, out);
    if (command == "eval") return cmd_eval(config, out);
    if (command == "decode") return cmd_decode(config, out);
    return cmd_verify(config, out, flags.inject_fault);
  } catch (const NumericError& e) {
    fmt::print(err, "numeric error in {}: {}\n", e.term(), e.what());
    return kExitNumeric;
  } catch (const ShapeError& e) {
    fmt::print(err, "shape error: {}\n", e.what());
    return kExitShape;
  } catch (const IoError& e) {
    fmt::print(err, "I/O error: {}\n", e.what());
    return kExitIo;
  } catch (const ParseError& e) {
    fmt::print(err, "malformed input: {}\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    // ConfigError, ValidationError, DomainError and anything unexpected.
    fmt::print(err, "configuration error: {}\n", e.what());
    return kExitConfig;
  }
}

}  // namespace capplan::cli
