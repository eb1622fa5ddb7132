#pragma once

#include <functional>
#include <span>
#include <string>

#include "localgrad/parameter.hpp"
#include "localgrad/tape.hpp"

namespace localgrad {

struct GradCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  std::string worst_location;  // "<param id>[<flat index>]"
  std::size_t checked = 0;
  std::size_t excluded = 0;    // coordinates whose perturbation crossed a relu kink
  std::string failure;         // set when a non-finite value aborted the check
};

struct GradCheckOptions {
  double tolerance = 1e-5;
  double step = 1e-5;
  /// Lower bound of the relative-error denominator, so coordinates whose true
  /// gradient is ~0 are judged by absolute error.
  double denominator_floor = 1e-4;
};

/// Compare backward() against central differences for every coordinate of
/// `params`. `loss_fn` must build a scalar loss on the tape it is given and be
/// deterministic. Parameter values are restored and grads zeroed afterwards.
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss_fn, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace localgrad
