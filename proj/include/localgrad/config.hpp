#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "localgrad/analysis.hpp"
#include "localgrad/data.hpp"
#include "localgrad/memory.hpp"
#include "localgrad/network.hpp"
#include "localgrad/optim.hpp"

namespace localgrad {

inline constexpr const char* kToolVersion = "0.1.0";

/// Where the samples come from. `kind` is spirals, blobs, csv or idx.
struct DatasetConfig {
  std::string kind = "spirals";
  std::size_t n_per_class = 1000;
  std::size_t classes = 2;
  double noise = 0.2;
  double turns = 4.0;
  double separation = 10.0;
  std::size_t dims = 2;
  std::string csv_path;
  std::string idx_images;
  std::string idx_labels;
};

/// Fully resolved run description. Every field has a key of the same name in
/// the config file and a `--key` flag.
struct RunConfig {
  std::string layers;  // empty: `depth` linear+relu layers of `width` units
  std::size_t depth = 8;
  std::size_t width = 128;
  std::size_t k = 4;
  TrainMode mode = TrainMode::man;
  bool use_ema = true;
  bool use_bias = true;
  bool raw_copy = false;
  SgdConfig sgd;
  HeadOptions heads;
  DatasetConfig data;
  std::vector<std::uint64_t> seeds{0};
  std::string output = "runs";
  ProbeConfig probe;
  std::size_t cka_samples = 512;
  std::size_t memory_batch = 128;

  RunConfig();

  AblationFlags flags() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Raw `key -> value text` pairs, values still in config-file syntax.
using ConfigValues = std::map<std::string, std::string>;

/// Parse a flat `key = value` document: `#` comments, quoted strings,
/// integers, floats, true/false and `[a, b]` integer lists. Duplicate or
/// malformed lines raise ConfigError with the line number.
ConfigValues parse_config_text(const std::string& text);
ConfigValues read_config_file(const std::filesystem::path& path);

/// Apply `values` on top of `base`; unknown keys and ill-typed values raise
/// ConfigError naming the key.
RunConfig apply_config(RunConfig base, const ConfigValues& values);

/// Every key in the order written by `to_config_text`.
const std::vector<std::string>& config_keys();

/// Resolved config as a document `parse_config_text` reads back to an equal
/// RunConfig. Starts with a comment naming the tool version.
std::string to_config_text(const RunConfig& cfg);

/// Main-network spec for `cfg` on samples of `sample_shape`.
ModelSpec model_spec(const RunConfig& cfg, const Shape& sample_shape);

/// The configured dataset, split and standardized with `seed`.
Dataset load_dataset(const DatasetConfig& cfg, std::uint64_t seed);

}  // namespace localgrad
