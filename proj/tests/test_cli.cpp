#include <gtest/gtest.h>

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "localgrad/cli.hpp"
#include "localgrad/config.hpp"
#include "localgrad/error.hpp"
#include "test_util.hpp"

using namespace localgrad;
using localgrad::test_util::TempDir;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::vector<std::string> small_run(const std::string& command, const fs::path& out) {
  return {command,     "--dataset", "spirals", "--n_per_class", "40",  "--turns",     "1",
          "--depth",   "4",         "--width", "12",            "--k", "2",           "--epochs",
          "3",         "--batch_size", "16",   "--head_budget", "1",   "--output",    out.string()};
}

std::vector<std::string> with(std::vector<std::string> args, std::initializer_list<std::string> extra) {
  args.insert(args.end(), extra);
  return args;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST(ConfigText, ParsesCommentsQuotesAndLists) {
  const ConfigValues v = parse_config_text(
      "# header\n"
      "lr = 0.05   # trailing\n"
      "output = \"runs/a # b\"\n"
      "seeds = [0, 1, 2]\n"
      "\n"
      "mode = local\n");
  EXPECT_EQ(v.at("lr"), "0.05");
  EXPECT_EQ(v.at("output"), "runs/a # b");
  EXPECT_EQ(v.at("mode"), "local");
  const RunConfig cfg = apply_config(RunConfig{}, v);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(cfg.sgd.lr, 0.05);
}

TEST(ConfigText, ErrorsNameTheLine) {
  try {
    parse_config_text("lr = 0.1\nthis line has no equals\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("output = \"unterminated\n"), ConfigError);
}

TEST(ConfigText, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(apply_config(RunConfig{}, {{"learning_rate", "0.1"}}), ConfigError);
  EXPECT_THROW(apply_config(RunConfig{}, {{"epochs", "ten"}}), ConfigError);
  EXPECT_THROW(apply_config(RunConfig{}, {{"mode", "global"}}), ConfigError);
  RunConfig bad;
  bad.sgd.lr = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ConfigText, ResolvedConfigRoundTrips) {
  RunConfig cfg;
  cfg.sgd.lr = 0.1 / 3.0;
  cfg.k = 2;
  cfg.seeds = {4, 9};
  cfg.output = "dir with \"quotes\"";
  cfg.layers = "linear:2:5,relu,linear:5:5,relu";
  const std::string text = to_config_text(cfg);
  EXPECT_EQ(text.rfind("# localgrad ", 0), 0u);
  const RunConfig back = apply_config(RunConfig{}, parse_config_text(text));
  EXPECT_EQ(to_config_text(back), text);
  EXPECT_EQ(back.sgd.lr, cfg.sgd.lr);
  EXPECT_EQ(config_keys().size(), parse_config_text(text).size());
}

TEST(ConfigText, DefaultsMatchDocumentedBenchmark) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.depth, 8u);
  EXPECT_EQ(cfg.width, 128u);
  EXPECT_EQ(cfg.k, 4u);
  EXPECT_EQ(cfg.mode, TrainMode::man);
  EXPECT_EQ(cfg.sgd.epochs, 200u);
  EXPECT_EQ(cfg.sgd.man_momentum, 0.995);
  EXPECT_EQ(cfg.data.n_per_class, 1000u);
  EXPECT_EQ(cfg.data.noise, 0.2);
}

TEST(Cli, FlagsOverrideFileOverrideDefaults) {
  TempDir dir;
  write_file(dir / "run.toml", "lr = 0.5\nmomentum = 0.8\n");
  const fs::path out = dir / "out";
  ASSERT_EQ(cli::run({"memory", "--config", (dir / "run.toml").string(), "--lr", "0.25", "--output", out.string()}),
            0);
  const RunConfig resolved = apply_config(RunConfig{}, read_config_file(out / "config.toml"));
  EXPECT_EQ(resolved.sgd.lr, 0.25);
  EXPECT_EQ(resolved.sgd.momentum, 0.8);
  EXPECT_EQ(resolved.sgd.weight_decay, RunConfig{}.sgd.weight_decay);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const std::string out = (dir / "out").string();
  EXPECT_EQ(cli::run({}), 2);
  EXPECT_EQ(cli::run({"fly"}), 2);
  EXPECT_EQ(cli::run({"memory", "--bogus", "1", "--output", out}), 2);
  EXPECT_EQ(cli::run({"memory", "--lr", "-1", "--output", out}), 2);
  EXPECT_EQ(cli::run({"memory", "--epochs", "many", "--output", out}), 2);
  EXPECT_EQ(cli::run({"memory", "--config", (dir / "missing.toml").string(), "--output", out}), 2);
  EXPECT_EQ(cli::run({"eval", (dir / "missing.ckpt").string(), "--output", out}), 2);
  write_file(dir / "junk.ckpt", "not a checkpoint");
  EXPECT_EQ(cli::run({"probe", (dir / "junk.ckpt").string(), "--output", out}), 2);
  EXPECT_EQ(cli::run({"train", "--dataset", "csv", "--csv_path", (dir / "none.csv").string(), "--output", out}), 2);
  EXPECT_EQ(cli::run({"memory", "--k", "9", "--depth", "4", "--output", out}), 2);
}

TEST(Cli, DivergenceExitsWithNumericCode) {
  TempDir dir;
  EXPECT_EQ(cli::run(with(small_run("train", dir / "out"), {"--lr", "1e200", "--schedule", "constant"})), 3);
}

TEST(Cli, TrainWritesDocumentedArtifacts) {
  TempDir dir;
  const fs::path out = dir / "out";
  ASSERT_EQ(cli::run(with(small_run("train", out), {"--seeds", "[3, 5]"})), 0);
  for (const char* seed : {"seed3", "seed5"}) {
    EXPECT_TRUE(fs::is_regular_file(out / seed / "model.ckpt"));
    const std::string metrics = read_file(out / seed / "metrics.csv");
    EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "epoch,split,mode,block,loss,total_objective,accuracy,lr,peak_scalars");
    EXPECT_GT(count_lines(metrics), 3u);
  }
  const auto summary = nlohmann::json::parse(read_file(out / "summary.json"));
  EXPECT_EQ(summary.at("command"), "train");
  EXPECT_EQ(summary.at("mode"), "man");
  EXPECT_EQ(summary.at("seeds").size(), 2u);
  const double a = summary.at("final_test_error")[0], b = summary.at("final_test_error")[1];
  EXPECT_DOUBLE_EQ(summary.at("mean_test_error").get<double>(), (a + b) / 2.0);
  EXPECT_NEAR(summary.at("std_test_error").get<double>(), std::abs(a - b) / std::sqrt(2.0), 1e-15);

  ASSERT_EQ(cli::run({"eval", (out / "seed3" / "model.ckpt").string(), "--config", (out / "config.toml").string(),
                      "--output", (dir / "eval").string()}),
            0);
  const auto eval = nlohmann::json::parse(read_file(dir / "eval" / "eval.json"));
  EXPECT_DOUBLE_EQ(eval[0].at("test_error").get<double>(), a);
}

TEST(Cli, RerunFromResolvedConfigIsBitwiseIdentical) {
  TempDir dir;
  ASSERT_EQ(cli::run(small_run("train", dir / "first")), 0);
  ASSERT_EQ(cli::run({"train", "--config", (dir / "first" / "config.toml").string(), "--output",
                      (dir / "second").string()}),
            0);
  EXPECT_EQ(read_file(dir / "first" / "seed0" / "metrics.csv"), read_file(dir / "second" / "seed0" / "metrics.csv"));
  EXPECT_EQ(read_file(dir / "first" / "seed0" / "model.ckpt"), read_file(dir / "second" / "seed0" / "model.ckpt"));
}

TEST(Cli, ProbeAndCkaOnTrainedCheckpoint) {
  TempDir dir;
  const fs::path out = dir / "out";
  ASSERT_EQ(cli::run(small_run("train", out)), 0);
  const std::string ckpt = (out / "seed0" / "model.ckpt").string();
  const std::string cfg = (out / "config.toml").string();
  ASSERT_EQ(cli::run({"probe", ckpt, "--config", cfg, "--probe_epochs", "5", "--output", (dir / "p").string()}), 0);
  const std::string probe = read_file(dir / "p" / "probe.csv");
  EXPECT_EQ(count_lines(probe), 3u);

  ASSERT_EQ(cli::run({"cka", ckpt, ckpt, "--config", cfg, "--output", (dir / "c").string()}), 0);
  std::istringstream rows(read_file(dir / "c" / "cka.csv"));
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "block_a,block_b,cka");
  std::size_t diagonal = 0;
  while (std::getline(rows, line)) {
    int a = 0, b = 0;
    double v = 0.0;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%d,%lf", &a, &b, &v), 3) << line;
    if (a == b) {
      EXPECT_NEAR(v, 1.0, 1e-9);
      ++diagonal;
    }
  }
  EXPECT_EQ(diagonal, 2u);
}

TEST(Cli, MemorySingleBlockLocalEqualsEndToEnd) {
  TempDir dir;
  ASSERT_EQ(cli::run({"memory", "--k", "1", "--output", (dir / "m").string()}), 0);
  const auto reports = nlohmann::json::parse(read_file(dir / "m" / "memory.json"));
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_EQ(reports[0].at("peak_scalars"), reports[1].at("peak_scalars"));

  ASSERT_EQ(cli::run({"memory", "--ks", "2,4", "--modes", "local,man", "--width", "256", "--output",
                      (dir / "n").string()}),
            0);
  const auto grid = nlohmann::json::parse(read_file(dir / "n" / "memory.json"));
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_EQ(grid[3].at("peak_scalars"), 1354854);
}

TEST(Cli, AblationReportsEveryArm) {
  TempDir dir;
  const fs::path out = dir / "out";
  ASSERT_EQ(cli::run(small_run("ablate", out)), 0);
  std::istringstream rows(read_file(out / "ablation.csv"));
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "arm,table,mean_test_error,std_test_error,seeds");
  std::map<std::string, std::string> means;
  while (std::getline(rows, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    means[line.substr(0, c1)] = line.substr(c2 + 1, c3 - c2 - 1);
  }
  EXPECT_EQ(means.size(), 6u);
  for (const char* arm : {"none", "ema_only", "bias_only", "ema_bias", "raw_copy"})
    EXPECT_TRUE(fs::is_regular_file(out / arm / "seed0" / "metrics.csv")) << arm;
  EXPECT_EQ(means.at("ema_copy"), means.at("ema_only"));
}

TEST(Cli, WritesStayInsideOutputDirectory) {
  TempDir dir;
  const fs::path out = dir / "nested" / "out";
  ASSERT_EQ(cli::run(small_run("train", out)), 0);
  std::vector<fs::path> outside;
  for (const auto& entry : fs::recursive_directory_iterator(dir.path())) {
    const auto rel = fs::relative(entry.path(), out);
    if (!rel.empty() && *rel.begin() == ".." && entry.path() != dir / "nested") outside.push_back(entry.path());
  }
  EXPECT_TRUE(outside.empty()) << outside.front();
}
