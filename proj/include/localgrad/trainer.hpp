#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "localgrad/data.hpp"
#include "localgrad/memory.hpp"
#include "localgrad/network.hpp"
#include "localgrad/optim.hpp"

namespace localgrad {

/// One line of the metrics CSV. `block` is 0 for whole-model rows.
struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  std::string mode;
  std::size_t block = 0;
  double loss = 0.0;
  double total_objective = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  std::uint64_t peak_scalars = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,mode,block,loss,total_objective,accuracy,lr,peak_scalars";
std::string to_csv_line(const MetricsRow& row);

struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  OptimizerState optimizer;
  std::vector<MetricsRow> history;

  /// When set, every backward pass checks that no parameter outside the
  /// loss's update set received gradient; offenders land in `leaks`.
  bool audit_isolation = false;
  std::vector<std::string> leaks;
  /// Loss labels ("L1".."LK", "global") that ever moved each parameter.
  std::map<std::string, std::set<std::string>> update_sources;
  /// Ordered events of the most recent step: "update:block<k>", "ema:adapter<k>".
  std::vector<std::string> last_step_events;
};

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

struct StepMetrics {
  std::vector<double> block_losses;  // L_1..L_K (just the global loss for e2e)
  double total = 0.0;
  std::size_t correct = 0;           // final-classifier hits on the batch
};

/// One local-learning step: blocks 1..K in order, each with its own loss,
/// backward and update; then the EMA refresh of every adapter. Requires K >= 2.
StepMetrics local_train_step(PartitionedNetwork& net, const Batch& batch, const SgdConfig& cfg, TrainState& state,
                             double lr);

/// One end-to-end step: global loss through every block, single update of the
/// main parameters. Heads and adapters are untouched.
StepMetrics e2e_train_step(PartitionedNetwork& net, const Batch& batch, const SgdConfig& cfg, TrainState& state,
                           double lr);

/// Global loss plus every auxiliary loss, evaluated without recording.
/// For logging only.
StepMetrics total_objective(PartitionedNetwork& net, const Batch& batch);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(PartitionedNetwork& net, const Dataset& data, const std::vector<std::size_t>& indices);

struct FitResult {
  TrainState state;
  double final_test_error = 1.0;
  double best_test_error = 1.0;
};

/// Train for cfg.epochs with seeded per-epoch shuffling and the configured lr
/// schedule, evaluating on the test split before training and after every
/// epoch. e2e mode ignores heads and adapters; local and man both use
/// local_train_step (falling back to e2e for K = 1). Aborts with NumericError
/// carrying epoch/step context on a non-finite loss.
FitResult fit(PartitionedNetwork& net, const Dataset& data, const SgdConfig& cfg, TrainMode mode,
              bool audit_isolation = false);

/// Mode implied by a network's flags.
TrainMode mode_of(const PartitionedNetwork& net);

}  // namespace localgrad
