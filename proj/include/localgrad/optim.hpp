#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "localgrad/network.hpp"

namespace localgrad {

enum class Schedule { constant, cosine };

struct SgdConfig {
  double lr = 0.1;
  /// Rate for auxiliary heads and adapters; 0 shares `lr`.
  double aux_lr = 0.0;
  double momentum = 0.9;  // Nesterov
  double weight_decay = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 128;
  Schedule schedule = Schedule::cosine;
  double man_momentum = 0.995;  // EMA decay of the adapter copy
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// lr_max * (1 + cos(pi * epoch / total)) / 2 for cosine, lr_max otherwise.
double lr_at(Schedule schedule, std::size_t epoch, std::size_t total_epochs, double lr_max);

struct ParamUpdate {
  Parameter* param;
  bool decay = true;
};

/// Velocity buffers keyed by parameter id.
struct OptimizerState {
  std::map<std::string, std::vector<double>> velocity;
};

/// Nesterov SGD over `params` using their accumulated grads, then zeroes the
/// grads:  g += wd * theta (decayed params only);  v = mu * v + g;
///         theta -= lr * (g + mu * v).
/// Throws NumericError naming the parameter when a grad is non-finite; in
/// that case no parameter is modified.
void sgd_step(std::span<const ParamUpdate> params, OptimizerState& state, double lr, double momentum,
              double weight_decay);

}  // namespace localgrad
