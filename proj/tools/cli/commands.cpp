#include "cli/commands.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "capplan/checkpoint.hpp"
#include "capplan/dataset_io.hpp"
#include "capplan/evaluate.hpp"
#include "capplan/infer.hpp"
#include "capplan/random.hpp"
#include "capplan/trainer.hpp"

namespace capplan::cli {

namespace fs = std::filesystem;

namespace {

void ensure_parent(const fs::path& path) {
  if (!path.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) {
    throw IoError(fmt::format("cannot create directory {}: {}", path.parent_path().string(),
                              ec.message()));
  }
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  return out;
}

std::vector<PlanWindow> keep_horizons(const std::vector<PlanWindow>& windows,
                                      const std::vector<int>& horizons) {
  if (horizons.empty()) return windows;
  const std::set<int> keep(horizons.begin(), horizons.end());
  std::vector<PlanWindow> out;
  for (const auto& w : windows) {
    if (keep.count(w.horizon)) out.push_back(w);
  }
  return out;
}

void zero_captions(std::vector<PlanWindow>& windows) {
  for (auto& w : windows) {
    w.start_caption_emb.setZero();
    w.goal_caption_emb.setZero();
  }
}

// Every window must fit the model: observation dims, horizon and actions.
void check_compatible(const model::GeneratorConfig& c, const std::vector<PlanWindow>& windows) {
  for (const auto& w : windows) {
    if (w.start_obs.size() != c.input_dim || w.goal_obs.size() != c.input_dim) {
      throw ShapeError(fmt::format("dataset window from {} has observation dim {}, checkpoint "
                                   "expects {}",
                                   w.source_video_id, w.start_obs.size(), c.input_dim));
    }
    if (w.horizon > c.max_horizon) {
      throw ShapeError(fmt::format("dataset horizon {} exceeds checkpoint max_horizon {}",
                                   w.horizon, c.max_horizon));
    }
    for (ActionIndex a : w.actions) {
      if (a >= c.vocab_size) {
        throw ShapeError(fmt::format("dataset action {} outside checkpoint vocabulary of {}", a,
                                     c.vocab_size));
      }
    }
  }
}

fs::path checkpoint_path(const RunConfig& config) {
  const std::string& explicit_path = config.get("eval.checkpoint");
  if (!explicit_path.empty()) return explicit_path;
  return fs::path(config.get("train.checkpoint_dir")) / "best.ckpt";
}

std::string join(const ActionSequence& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
  const world::World world(config.world_spec());
  const auto horizons = config.get_int_list("data.horizons");
  if (horizons.empty()) throw ConfigError("data.horizons must list at least one horizon");
  const auto gen = world::generate_dataset(world, config.get_int("data.videos"), horizons,
                                           derive_seed(config.get_u64("seed"), {0x64617461ULL}));
  const fs::path path = config.get("data.path");
  ensure_parent(path);
  io::write_dataset(gen.split, path);

  auto videos = [](const std::vector<PlanWindow>& ws) {
    std::set<std::string> ids;
    for (const auto& w : ws) ids.insert(w.source_video_id);
    return ids.size();
  };
  fmt::print(out, "wrote {}\n", path.string());
  fmt::print(out, "videos: train {} val {} test {} (skipped short: {})\n", videos(gen.split.train),
             videos(gen.split.val), videos(gen.split.test), gen.skipped_short);
  for (int h : horizons) {
    auto count = [h](const std::vector<PlanWindow>& ws) {
      return std::count_if(ws.begin(), ws.end(), [h](const PlanWindow& w) { return w.horizon == h; });
    };
    fmt::print(out, "windows T={}: train {} val {} test {}\n", h, count(gen.split.train),
               count(gen.split.val), count(gen.split.test));
  }
  return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  world::DatasetSplit split = io::read_dataset(fs::path(config.get("data.path")));
  const auto horizons = config.get_int_list("train.horizons");
  split.train = keep_horizons(split.train, horizons);
  split.val = keep_horizons(split.val, horizons);
  const train::TrainConfig tc = config.train_config();
  if (tc.ablate_context) {
    zero_captions(split.train);
    zero_captions(split.val);
  }
  const model::GeneratorConfig mc = config.generator_config();
  check_compatible(mc, split.train);
  check_compatible(mc, split.val);

  train::FitOptions options;
  options.checkpoint_dir = fs::path(config.get("train.checkpoint_dir"));
  const std::string& resume = config.get("train.resume");
  if (!resume.empty()) options.resume = io::load_checkpoint(resume);
  std::ofstream curve = open_output(config.get("train.curve"),
                                    options.resume ? std::ios::app : std::ios::trunc);
  options.on_epoch = [&](const train::EpochRecord& r) {
    curve << train::format_epoch_record(r) << '\n';
    curve.flush();
    if (r.epoch % 10 == 0 || r.epoch + 1 == tc.epochs) {
      fmt::print(out, "epoch {:4d}  l_ca {:.4f}  l_c {:.4f}  l_adv {:.4f}  l_critic {:.4f}  lr {:.3g}  val SR {:.2f}\n",
                 r.epoch, r.l_ca, r.l_c, r.l_gen_adv, r.l_critic, r.lr, r.val_sr);
    }
  };
  const train::FitResult result = train::fit(split, mc, tc, options);
  fmt::print(out, "best epoch {} (val SR {:.2f}); checkpoints in {}\n", result.best_epoch,
             result.best_val_sr, options.checkpoint_dir->string());
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  const io::Checkpoint ckpt = io::load_checkpoint(checkpoint_path(config));
  const world::DatasetSplit split = io::read_dataset(fs::path(config.get("data.path")));
  const model::GeneratorConfig& mc = ckpt.state.config;
  check_compatible(mc, split.train);
  check_compatible(mc, split.test);

  std::optional<world::World> world;
  if (config.get_bool("eval.world_oracle")) {
    world.emplace(config.world_spec());
    if (world->spec().obs_dim != mc.input_dim || world->spec().vocab_size != mc.vocab_size) {
      throw ConfigError("world settings disagree with the checkpoint; set eval.world_oracle=false "
                        "or use the config that generated the data");
    }
  }
  const TransitionMatrix transitions = train::transition_from_windows(split.train, mc.vocab_size);
  metrics::EvaluateOptions options;
  options.samples = config.get_int("eval.samples");
  options.seed = config.get_u64("seed");
  options.horizons = config.get_int_list("eval.horizons");
  options.world = world ? &*world : nullptr;
  std::vector<MetricReport> reports;
  try {
    reports = metrics::evaluate(infer::GeneratorSampler(ckpt.state), split.test, transitions, options);
  } catch (const std::out_of_range& e) {
    throw ConfigError(fmt::format("test windows do not match the configured world ({})", e.what()));
  }

  std::ofstream results = open_output(config.get("eval.results"));
  fmt::print(out, "{:>3} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7}\n", "T", "SR", "mAcc",
             "mIoU", "KL", "NLL", "cos", "modeP", "modeR");
  for (const auto& r : reports) {
    results << metrics::format_report(r) << '\n';
    fmt::print(out, "{:>3} {:>8.2f} {:>8.2f} {:>8.2f} {:>8.4f} {:>8.4f} {:>8.4f} {:>7.3f} {:>7.3f}\n",
               r.horizon, r.sr, r.macc, r.miou, r.kl, r.nll, r.cosine_distance, r.mode_precision,
               r.mode_recall);
  }
  if (!results) throw IoError(fmt::format("failed writing {}", config.get("eval.results")));
  return kExitOk;
}

int cmd_decode(const RunConfig& config, std::ostream& out) {
  const io::Checkpoint ckpt = io::load_checkpoint(checkpoint_path(config));
  const world::DatasetSplit split = io::read_dataset(fs::path(config.get("data.path")));
  const auto test = keep_horizons(split.test, config.get_int_list("eval.horizons"));
  const int index = config.get_int("decode.window");
  if (index < 0 || index >= static_cast<int>(test.size())) {
    throw ConfigError(fmt::format("decode.window {} outside the {} test windows", index, test.size()));
  }
  const PlanWindow& w = test[static_cast<std::size_t>(index)];
  check_compatible(ckpt.state.config, {w});
  const TransitionMatrix transitions =
      train::transition_from_windows(split.train, ckpt.state.config.vocab_size);
  const auto result = infer::plan(ckpt.state, w, config.get_int("eval.samples"), transitions,
                                  metrics::window_seed(config.get_u64("seed"), w));
  std::string dist = "[";
  const Matrix& p = result.distribution.probs();
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    dist += t ? ",[" : "[";
    for (Eigen::Index a = 0; a < p.cols(); ++a) dist += (a ? "," : "") + io::format_real(p(t, a));
    dist += "]";
  }
  dist += "]";
  const std::string line = fmt::format(
      "{{\"video_id\":\"{}\",\"horizon\":{},\"plan\":{},\"gt\":{},\"distribution\":{}}}\n",
      w.source_video_id, w.horizon, join(result.plan), join(w.actions), dist);
  const std::string& path = config.get("decode.out");
  if (path.empty()) {
    out << line;
  } else {
    std::ofstream f = open_output(path);
    f << line;
  }
  return kExitOk;
}

int cmd_verify(const RunConfig& config, std::ostream& out, bool inject_fault) {
  const auto outcomes = run_verification(config, inject_fault);
  bool ok = true;
  for (const auto& o : outcomes) {
    fmt::print(out, "{} {}: {}\n", o.passed ? "PASS" : "FAIL", o.name, o.detail);
    ok = ok && o.passed;
  }
  return ok ? kExitOk : kExitVerifyFailed;
}

}  // namespace capplan::cli
