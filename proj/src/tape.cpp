#include "localgrad/tape.hpp"

#include <algorithm>

#include "localgrad/error.hpp"

namespace localgrad {

Parameter::Parameter(std::string id, const Tensor& init)
    : id_(std::move(id)),
      shape_(init.shape()),
      value_(init.data().begin(), init.data().end()),
      grad_(init.size(), 0.0) {}

void Parameter::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Tensor Parameter::read() const {
  ++reads_;
  return Tensor(shape_, value_);
}

void Parameter::assign(const Tensor& value) {
  if (value.shape() != shape_) {
    throw ShapeError("parameter " + id_ + ": expected shape " + to_string(shape_) + ", got " +
                     to_string(value.shape()));
  }
  std::copy(value.data().begin(), value.data().end(), value_.begin());
}

Tensor Tape::watch(Parameter& param) {
  Node node;
  node.param = &param;
  node.size = param.size();
  nodes_.push_back(std::move(node));
  return param.read().with_node({this, nodes_.size() - 1});
}

std::ptrdiff_t Tape::index_of(const Tensor& t) const {
  if (!t.has_node()) return -1;
  if (t.node()->tape != this) throw std::logic_error("tape: input recorded on a different tape");
  return static_cast<std::ptrdiff_t>(t.node()->index);
}

Tensor Tape::record(const Tensor& out, std::initializer_list<const Tensor*> inputs, BackwardRule rule) {
  Node node;
  bool any = false;
  for (const Tensor* in : inputs) {
    node.inputs.push_back(index_of(*in));
    any = any || in->has_node();
  }
  if (!any) return out.constant();
  node.rule = std::move(rule);
  node.size = out.size();
  nodes_.push_back(std::move(node));
  return out.with_node({this, nodes_.size() - 1});
}

Tensor Tape::boundary(const Tensor& x) {
  if (!x.has_node()) return x;
  Node node;
  node.inputs.push_back(index_of(x));
  node.size = x.size();
  node.boundary = true;
  nodes_.push_back(std::move(node));
  return x.with_node({this, nodes_.size() - 1});
}

std::size_t Tape::boundary_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.boundary; }));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.has_node() || loss.node()->tape != this) {
    throw std::logic_error("backward: loss is not recorded on this tape");
  }
  const std::size_t root = loss.node()->index;
  std::vector<std::vector<double>> grads(root + 1);
  grads[root].assign(1, 1.0);
  std::vector<std::vector<double>*> sinks;

  for (std::size_t i = root + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    const Node& node = nodes_[i];
    if (node.param) {
      auto g = node.param->mutable_grad();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += grads[i][j];
    } else if (!node.boundary) {
      sinks.clear();
      for (auto in : node.inputs) {
        if (in < 0) {
          sinks.push_back(nullptr);
          continue;
        }
        auto& g = grads[static_cast<std::size_t>(in)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(in)].size, 0.0);
        sinks.push_back(&g);
      }
      node.rule(grads[i], sinks);
    }
    grads[i].clear();
    grads[i].shrink_to_fit();
  }
}

void Tape::note_activation_pattern(std::uint64_t pattern, std::size_t near_kink) {
  pattern_ = (pattern_ ^ pattern) * 0x100000001b3ULL;
  near_kink_ += near_kink;
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->has_node()) continue;
    if (tape && t->node()->tape != tape) throw std::logic_error("tensors recorded on different tapes");
    tape = t->node()->tape;
  }
  return tape;
}

}  // namespace localgrad
