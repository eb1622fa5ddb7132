#include "localgrad/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "localgrad/analysis.hpp"
#include "localgrad/checkpoint.hpp"
#include "localgrad/config.hpp"
#include "localgrad/error.hpp"
#include "localgrad/trainer.hpp"

namespace localgrad::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Invocation {
  std::string config_path;
  ConfigValues flag_values;
  std::vector<std::string> checkpoints;
  std::vector<std::size_t> memory_ks;
  std::vector<std::string> memory_modes;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

RunConfig resolve(const Invocation& inv) {
  RunConfig cfg;
  if (!inv.config_path.empty()) cfg = apply_config(cfg, read_config_file(inv.config_path));
  cfg = apply_config(cfg, inv.flag_values);
  cfg.validate();
  return cfg;
}

void write_resolved(const RunConfig& cfg) { write_text(fs::path(cfg.output) / "config.toml", to_config_text(cfg)); }

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LOCALGRAD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("LOCALGRAD_THREADS: expected a positive integer");
    n = std::min(n, static_cast<std::size_t>(v));
  }
  return std::min(n, jobs);
}

/// Run job(i) for i in [0, jobs) on up to worker_count threads; the first
/// failure (in job order) is rethrown after all workers finish.
void run_parallel(std::size_t jobs, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = worker_count(jobs);
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SeedResult {
  std::uint64_t seed = 0;
  double final_error = 1.0;
  double best_error = 1.0;
};

SeedResult train_seed(const RunConfig& cfg, const AblationFlags& flags, std::uint64_t seed, const fs::path& dir) {
  Dataset data = load_dataset(cfg.data, seed);
  const ModelSpec spec = model_spec(cfg, data.sample_shape);
  PartitionedNetwork net = build_partitioned(spec, cfg.k, flags, cfg.sgd.man_momentum, seed, cfg.heads);
  SgdConfig sgd = cfg.sgd;
  sgd.seed = seed;
  FitResult result = fit(net, data, sgd, cfg.mode);

  std::string csv = std::string(kMetricsHeader) + "\n";
  for (const auto& row : result.state.history) csv += to_csv_line(row) + "\n";
  write_text(dir / "metrics.csv", csv);
  save_checkpoint(dir / "model.ckpt", net);
  return {seed, result.final_test_error, result.best_test_error};
}

std::vector<SeedResult> train_seeds(const RunConfig& cfg, const AblationFlags& flags, const fs::path& dir,
                                    const std::string& label) {
  std::vector<SeedResult> results(cfg.seeds.size());
  std::mutex log_mutex;
  run_parallel(cfg.seeds.size(), [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    results[i] = train_seed(cfg, flags, seed, dir / ("seed" + std::to_string(seed)));
    std::lock_guard lock(log_mutex);
    std::cerr << label << " seed " << seed << ": final test error " << results[i].final_error << "\n";
  });
  return results;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for a single value.
double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> final_errors(const std::vector<SeedResult>& results) {
  std::vector<double> out;
  for (const auto& r : results) out.push_back(r.final_error);
  return out;
}

PartitionedNetwork open_checkpoint(const std::string& path) {
  if (!fs::is_regular_file(path)) throw InputError("checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw InputError("corrupt checkpoint " + path + ": " + e.what());
  }
}

int cmd_train(const Invocation& inv) {
  const RunConfig cfg = resolve(inv);
  write_resolved(cfg);
  const auto results = train_seeds(cfg, cfg.flags(), cfg.output, to_string(cfg.mode));
  const auto errors = final_errors(results);
  json summary;
  summary["version"] = kToolVersion;
  summary["command"] = "train";
  summary["mode"] = to_string(cfg.mode);
  summary["k"] = cfg.k;
  summary["seeds"] = cfg.seeds;
  summary["final_test_error"] = errors;
  std::vector<double> best;
  for (const auto& r : results) best.push_back(r.best_error);
  summary["best_test_error"] = best;
  summary["mean_test_error"] = mean_of(errors);
  summary["std_test_error"] = stddev_of(errors);
  write_text(fs::path(cfg.output) / "summary.json", summary.dump(2) + "\n");
  std::cout << "mean test error " << mean_of(errors) << " (sd " << stddev_of(errors) << ", " << errors.size()
            << " seeds)\n";
  return 0;
}

int cmd_eval(const Invocation& inv) {
  const RunConfig cfg = resolve(inv);
  if (inv.checkpoints.empty()) throw ConfigError("eval: at least one checkpoint is required");
  write_resolved(cfg);
  json report = json::array();
  for (const auto& path : inv.checkpoints) {
    PartitionedNetwork net = open_checkpoint(path);
    const Dataset data = load_dataset(cfg.data, net.seed());
    const Evaluation ev = evaluate(net, data, data.test);
    report.push_back({{"checkpoint", path},
                      {"test_loss", ev.loss},
                      {"test_accuracy", ev.accuracy},
                      {"test_error", 1.0 - ev.accuracy}});
    std::cout << path << ": test error " << 1.0 - ev.accuracy << "\n";
  }
  write_text(fs::path(cfg.output) / "eval.json", report.dump(2) + "\n");
  return 0;
}

struct Arm {
  const char* name;
  const char* table;
  AblationFlags flags;
};

/// The EMA-copy arm trains the same configuration as EMA-only and reuses its
/// runs.
const std::vector<Arm>& ablation_arms() {
  static const std::vector<Arm> arms{
      {"none", "man", AblationFlags::vanilla()},
      {"ema_only", "man", {true, true, false, false}},
      {"bias_only", "man", {true, false, true, false}},
      {"ema_bias", "man", {true, true, true, false}},
      {"raw_copy", "ema", {true, true, false, true}},
      {"ema_copy", "ema", {true, true, false, false}},
  };
  return arms;
}

int cmd_ablate(const Invocation& inv) {
  RunConfig cfg = resolve(inv);
  write_resolved(cfg);
  std::string csv = "arm,table,mean_test_error,std_test_error,seeds\n";
  std::map<std::string, std::vector<SeedResult>> done;
  for (const auto& arm : ablation_arms()) {
    RunConfig arm_cfg = cfg;
    arm_cfg.mode = arm.flags.use_adapter ? TrainMode::man : TrainMode::local;
    arm_cfg.use_ema = arm.flags.use_ema;
    arm_cfg.use_bias = arm.flags.use_bias;
    arm_cfg.raw_copy = arm.flags.raw_copy_no_ema;
    const fs::path dir = fs::path(cfg.output) / arm.name;
    const std::string key = to_config_text(arm_cfg);
    if (!done.count(key)) done[key] = train_seeds(arm_cfg, arm_cfg.flags(), dir, arm.name);
    const auto errors = final_errors(done[key]);
    char line[160];
    std::snprintf(line, sizeof line, "%s,%s,%.17g,%.17g,%zu\n", arm.name, arm.table, mean_of(errors),
                  stddev_of(errors), errors.size());
    csv += line;
  }
  write_text(fs::path(cfg.output) / "ablation.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_probe(const Invocation& inv) {
  const RunConfig cfg = resolve(inv);
  if (inv.checkpoints.size() != 1) throw ConfigError("probe: exactly one checkpoint is required");
  write_resolved(cfg);
  PartitionedNetwork net = open_checkpoint(inv.checkpoints[0]);
  const Dataset data = load_dataset(cfg.data, net.seed());
  ProbeConfig probe = cfg.probe;
  probe.seed = net.seed();
  const ProbeReport report = probe_network(net, data, probe);
  write_text(fs::path(cfg.output) / "probe.csv", to_csv(report));
  std::cout << to_csv(report);
  return 0;
}

int cmd_cka(const Invocation& inv) {
  const RunConfig cfg = resolve(inv);
  if (inv.checkpoints.size() != 2) throw ConfigError("cka: exactly two checkpoints are required");
  write_resolved(cfg);
  PartitionedNetwork a = open_checkpoint(inv.checkpoints[0]);
  PartitionedNetwork b = open_checkpoint(inv.checkpoints[1]);
  const Dataset data = load_dataset(cfg.data, a.seed());
  std::vector<std::size_t> indices(data.test.begin(),
                                   data.test.begin() + std::min(cfg.cka_samples, data.test.size()));
  const CkaMatrix matrix = cka_report(a, b, data, indices, inv.checkpoints[0], inv.checkpoints[1]);
  write_text(fs::path(cfg.output) / "cka.csv", to_csv(matrix));
  std::cout << to_csv(matrix);
  return 0;
}

int cmd_memory(const Invocation& inv) {
  const RunConfig cfg = resolve(inv);
  write_resolved(cfg);
  std::vector<TrainMode> modes;
  if (!inv.memory_modes.empty()) {
    for (const auto& m : inv.memory_modes) {
      try {
        modes.push_back(parse_mode(m));
      } catch (const std::exception&) {
        throw ConfigError("modes: expected e2e, local or man, got '" + m + "'");
      }
    }
  } else if (inv.flag_values.count("mode")) {
    modes.push_back(cfg.mode);
  } else {
    modes = {TrainMode::e2e, TrainMode::local, TrainMode::man};
  }
  const std::vector<std::size_t> ks = inv.memory_ks.empty() ? std::vector<std::size_t>{cfg.k} : inv.memory_ks;
  Shape sample_shape;
  if (cfg.data.kind == "spirals")
    sample_shape = {2};
  else if (cfg.data.kind == "blobs")
    sample_shape = {cfg.data.dims};
  else
    sample_shape = load_dataset(cfg.data, 0).sample_shape;
  const ModelSpec spec = model_spec(cfg, sample_shape);
  json reports = json::array();
  for (std::size_t k : ks) {
    for (TrainMode mode : modes) {
      const MemoryReport report = measure_peak_memory(spec, k, mode, cfg.memory_batch, cfg.heads);
      reports.push_back(json::parse(to_json(report)));
      std::cout << to_string(mode) << " K=" << k << ": peak " << report.peak_scalars << " scalars\n";
    }
  }
  write_text(fs::path(cfg.output) / "memory.json", reports.dump(2) + "\n");
  return 0;
}

void add_common(CLI::App& sub, Invocation& inv) {
  sub.add_option("--config", inv.config_path, "Config file (flat key = value)");
  for (const auto& key : config_keys()) {
    sub.add_option_function<std::string>(
        "--" + key, [&inv, key](const std::string& v) { inv.flag_values[key] = v; },
        "Override config key '" + key + "'");
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Local learning with momentum auxiliary networks", "localgrad"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Invocation inv;

  auto* train = app.add_subcommand("train", "Train one model per seed");
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on the test split");
  auto* ablate = app.add_subcommand("ablate", "Run the six ablation arms");
  auto* probe = app.add_subcommand("probe", "Linear probes on every block of a checkpoint");
  auto* cka = app.add_subcommand("cka", "Block-pair CKA between two checkpoints");
  auto* memory = app.add_subcommand("memory", "Analytic peak memory for each mode and K");
  for (auto* sub : {train, eval, ablate, probe, cka, memory}) add_common(*sub, inv);
  eval->add_option("checkpoints", inv.checkpoints, "Checkpoint files")->required();
  probe->add_option("checkpoint", inv.checkpoints, "Checkpoint file")->required()->expected(1);
  cka->add_option("checkpoints", inv.checkpoints, "Two checkpoint files")->required()->expected(2);
  memory->add_option("--ks", inv.memory_ks, "Block counts to report")->delimiter(',');
  memory->add_option("--modes", inv.memory_modes, "Modes to report")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(inv);
    if (eval->parsed()) return cmd_eval(inv);
    if (ablate->parsed()) return cmd_ablate(inv);
    if (probe->parsed()) return cmd_probe(inv);
    if (cka->parsed()) return cmd_cka(inv);
    return cmd_memory(inv);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: model does not fit the data: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace localgrad::cli
