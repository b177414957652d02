#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "test_support.hpp"

namespace capplan::cli {
namespace {

using testing::TempDir;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "capplan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// A world and model small enough to train in a second.
std::filesystem::path write_small_config(const TempDir& dir) {
  const auto path = dir / "small.cfg";
  std::ofstream f(path);
  f << "# small run\n"
    << "world.tasks = 2\nworld.vocab_size = 6\nworld.obs_dim = 8\nworld.layers = 4\n"
    << "data.videos = 12\n"
    << "data.path = " << (dir / "data.jsonl").string() << "\n"
    << "model.embed_hidden = 8\nmodel.hidden_dim = 8\nmodel.layers = 1\nmodel.heads = 2\n"
    << "model.memory_entries = 4\nmodel.noise_dim = 4\nmodel.max_horizon = 3\n"
    << "model.ffn_dim = 8\nmodel.context_hidden = 8\nmodel.critic_hidden = 8\n"
    << "train.epochs = 2\ntrain.batch_size = 4\ntrain.val_samples = 2\n"
    << "train.checkpoint_dir = " << (dir / "ckpt").string() << "\n"
    << "train.curve = " << (dir / "curve.jsonl").string() << "\n"
    << "eval.samples = 5\n"
    << "eval.results = " << (dir / "results.jsonl").string() << "\n";
  return path;
}

TEST(RunConfig, DefaultsAreComplete) {
  const RunConfig c = RunConfig::defaults();
  EXPECT_EQ(c.get_int("train.epochs"), 200);
  EXPECT_DOUBLE_EQ(c.get_double("train.initial_lr"), 7e-4);
  EXPECT_EQ(c.get_int("eval.samples"), 1500);
  EXPECT_EQ(c.get_int_list("data.horizons"), std::vector<int>{3});
  EXPECT_TRUE(c.get_int_list("train.horizons").empty());
  EXPECT_NO_THROW(c.generator_config());
  EXPECT_NO_THROW(c.train_config());
  EXPECT_NO_THROW(c.world_spec());
}

TEST(RunConfig, TextParsing) {
  RunConfig c = RunConfig::defaults();
  c.load_text("# comment\n\n  seed = 9  \ntrain.optimizer=adam\n");
  EXPECT_EQ(c.get_u64("seed"), 9u);
  EXPECT_EQ(c.get("train.optimizer"), "adam");
  EXPECT_THROW(c.load_text("no_equals_sign\n"), ConfigError);
  EXPECT_THROW(c.load_text("bogus.key = 1\n"), ConfigError);
  EXPECT_THROW(c.define("seed"), ConfigError);
  c.set("seed", "abc");
  EXPECT_THROW(c.get_u64("seed"), ConfigError);
}

TEST(RunConfig, DumpRoundTrips) {
  RunConfig a = RunConfig::defaults();
  a.set("train.epochs", "17");
  RunConfig b = RunConfig::defaults();
  b.load_text(a.dump());
  EXPECT_EQ(a.values(), b.values());
}

TEST(Cli, PrecedenceDefaultsFileDefineFlag) {
  TempDir dir;
  const auto cfg = dir / "p.cfg";
  std::ofstream(cfg) << "seed = 5\ntrain.epochs = 11\neval.samples = 7\n";

  CliRun r = run({"--print-config", "eval", "--config", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("seed = 5\n"), std::string::npos);
  EXPECT_NE(r.out.find("train.epochs = 11\n"), std::string::npos);
  EXPECT_NE(r.out.find("train.batch_size = 32\n"), std::string::npos);

  r = run({"--print-config", "eval", "--config", cfg.string(), "-D", "seed=6", "-D",
           "eval.samples=8"});
  EXPECT_NE(r.out.find("seed = 6\n"), std::string::npos);
  EXPECT_NE(r.out.find("eval.samples = 8\n"), std::string::npos);

  r = run({"--print-config", "eval", "--config", cfg.string(), "-D", "seed=6", "--seed", "4",
           "--samples", "9"});
  EXPECT_NE(r.out.find("seed = 4\n"), std::string::npos);
  EXPECT_NE(r.out.find("eval.samples = 9\n"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(run({"eval", "-D", "no.such.key=1"}).code, kExitConfig);
  EXPECT_EQ(run({"gen-data", "-D", "world.vocab_size=0"}).code, kExitConfig);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, MissingFilesExitThree) {
  TempDir dir;
  EXPECT_EQ(run({"eval", "--config", (dir / "absent.cfg").string()}).code, kExitIo);
  EXPECT_EQ(run({"eval", "--checkpoint", (dir / "absent.ckpt").string()}).code, kExitIo);
  const CliRun r = run({"gen-data", "--config", write_small_config(dir).string(), "--out",
                     "/proc/capplan_unwritable/data.jsonl"});
  EXPECT_EQ(r.code, kExitIo) << r.err;
}

TEST(Cli, GenDataIsDeterministic) {
  TempDir dir;
  const auto cfg = write_small_config(dir).string();
  const auto a = dir / "a.jsonl", b = dir / "b.jsonl", c = dir / "c.jsonl";
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--seed", "3", "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--seed", "3", "--out", b.string()}).code, 0);
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--seed", "4", "--out", c.string()}).code, 0);
  EXPECT_EQ(read_file(a), read_file(b));
  EXPECT_NE(read_file(a), read_file(c));
}

TEST(Cli, TrainEvalDecodePipeline) {
  TempDir dir;
  const auto cfg = write_small_config(dir).string();
  ASSERT_EQ(run({"gen-data", "--config", cfg}).code, 0);
  CliRun r = run({"train", "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / "best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / "last.ckpt"));
  EXPECT_NE(read_file(dir / "curve.jsonl").find("\"epoch\":1"), std::string::npos);

  r = run({"eval", "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string results = read_file(dir / "results.jsonl");
  EXPECT_NE(results.find("\"horizon\":3"), std::string::npos);
  EXPECT_NE(results.find("\"K\":5"), std::string::npos);

  r = run({"decode", "--config", cfg, "--window", "0"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(r.out.empty());

  // The same checkpoint cannot read a dataset with other observation sizes.
  const auto other = dir / "other.jsonl";
  ASSERT_EQ(run({"gen-data", "--config", cfg, "-D", "world.obs_dim=9", "--out",
                 other.string()}).code, 0);
  r = run({"eval", "--config", cfg, "--dataset", other.string(), "-D",
           "eval.world_oracle=false"});
  EXPECT_EQ(r.code, kExitShape) << r.err;
}

TEST(Cli, VerifyPassesAndDetectsFault) {
  CliRun r = run({"verify", "-D", "verify.viterbi_trials=50", "-D",
               "verify.random_constructions=50", "-D", "verify.metric_datasets=20"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
  r = run({"verify", "--inject-fault", "-D", "verify.viterbi_trials=10", "-D",
           "verify.random_constructions=10", "-D", "verify.metric_datasets=5"});
  EXPECT_EQ(r.code, kExitVerifyFailed);
  EXPECT_NE(r.out.find("FAIL gradient"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace capplan::cli
