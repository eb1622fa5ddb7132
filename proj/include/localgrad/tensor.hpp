#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace localgrad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

/// Handle of a recorded node on a Tape.
struct NodeRef {
  Tape* tape = nullptr;
  std::size_t index = 0;
};

/// Dense row-major double tensor.
///
/// Storage is shared and immutable, so copies are cheap and a Tensor captured
/// by a backward rule always sees the forward value. A tensor without a node
/// is a constant: no gradient ever flows into it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Convenience for tests: a rank-2 tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  std::span<const double> data() const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  const std::optional<NodeRef>& node() const { return node_; }
  bool has_node() const { return node_.has_value(); }

  /// Same values, no tape node.
  Tensor constant() const;
  /// Same values, new shape with the same element count. Drops the node.
  Tensor reshaped(Shape shape) const;

  /// Bitwise equality of shape and values.
  bool same_values(const Tensor& other) const;

 private:
  friend class Tape;
  Tensor with_node(NodeRef node) const;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::optional<NodeRef> node_;
};

}  // namespace localgrad
