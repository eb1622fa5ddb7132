#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "localgrad/tensor.hpp"

namespace localgrad {

/// Trainable tensor with an accumulated gradient of identical shape.
///
/// Forward passes obtain values through read(), which is counted so callers
/// can assert which parameters a code path touched.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string id, const Tensor& init);

  const std::string& id() const { return id_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return value_.size(); }

  std::span<const double> value() const { return value_; }
  std::span<double> mutable_value() { return value_; }
  std::span<const double> grad() const { return grad_; }
  std::span<double> mutable_grad() { return grad_; }
  void zero_grad();

  /// Current value as a constant tensor; counts as one read.
  Tensor read() const;
  std::uint64_t reads() const { return reads_; }
  void reset_reads() { reads_ = 0; }

  /// Overwrite value from a tensor of the same shape; grad untouched.
  void assign(const Tensor& value);

 private:
  std::string id_;
  Shape shape_;
  std::vector<double> value_;
  std::vector<double> grad_;
  mutable std::uint64_t reads_ = 0;
};

}  // namespace localgrad
