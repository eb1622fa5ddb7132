#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "localgrad/parameter.hpp"
#include "localgrad/tensor.hpp"

namespace localgrad {

/// Local gradient rule of a recorded op. `grad_out` is dL/d(output);
/// `grad_in[i]` is the accumulator for input i, or null when that input is a
/// constant. Rules must add into the accumulators, never overwrite.
using BackwardRule =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the list is topologically
/// sorted. Nodes created by stop_gradient are boundary marks: backward drops
/// the gradient arriving at them instead of passing it to their input.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node bound to `param`; backward accumulates into param.grad.
  Tensor watch(Parameter& param);

  /// Attach `out` to a new node whose inputs are `inputs`. Constant inputs
  /// are allowed. Returns `out` unchanged (no node) when every input is
  /// constant.
  Tensor record(const Tensor& out, std::initializer_list<const Tensor*> inputs, BackwardRule rule);

  /// Boundary-marked identity of `x`.
  Tensor boundary(const Tensor& x);

  /// Accumulate d(loss)/d(param) into every parameter reachable from `loss`
  /// without crossing a boundary. May be called several times per tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool is_boundary(std::size_t index) const { return nodes_.at(index).boundary; }
  std::size_t boundary_count() const;

  /// Non-differentiable points seen by kinked primitives (relu) since the
  /// last reset; used by the gradient checker to exclude coordinates.
  void note_activation_pattern(std::uint64_t pattern, std::size_t near_kink);
  std::uint64_t activation_pattern() const { return pattern_; }
  std::size_t near_kink_count() const { return near_kink_; }

 private:
  struct Node {
    std::vector<std::ptrdiff_t> inputs;  // -1 for constant inputs
    BackwardRule rule;
    Parameter* param = nullptr;
    std::size_t size = 0;
    bool boundary = false;
  };

  std::ptrdiff_t index_of(const Tensor& t) const;

  std::vector<Node> nodes_;
  std::uint64_t pattern_ = 0xcbf29ce484222325ULL;
  std::size_t near_kink_ = 0;
};

/// Tape shared by all non-constant inputs, or null if all are constant.
/// Throws if inputs belong to different tapes.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace localgrad
