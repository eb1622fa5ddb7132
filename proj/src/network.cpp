#include "localgrad/network.hpp"

#include <algorithm>
#include <cmath>

#include "localgrad/error.hpp"
#include "localgrad/ops.hpp"

namespace localgrad {
namespace {

std::size_t pooled_features(const Shape& sample) {
  // Conv feature maps are globally pooled; flat features pass through.
  return sample.size() == 3 ? sample[0] : numel(sample);
}

Tensor pool_features(const Tensor& x) {
  if (x.rank() == 4) return avgpool_global(x);
  if (x.rank() == 2) return x;
  return flatten(x);
}

std::size_t head_cost(std::size_t in, std::size_t hidden, std::size_t classes) {
  return in * hidden + hidden + hidden * classes + classes;
}

void check_block_index(const PartitionedNetwork& net, std::size_t k, const char* what) {
  if (k < 1 || k > net.num_blocks()) {
    throw std::out_of_range(std::string(what) + ": block " + std::to_string(k) + " outside [1, " +
                            std::to_string(net.num_blocks()) + "]");
  }
}

void append(std::vector<Parameter*>& out, Layer& layer) {
  if (!layer.spec.parametric()) return;
  out.push_back(&layer.weight);
  out.push_back(&layer.bias);
}

}  // namespace

std::size_t parametric_layer_count(const std::vector<LayerSpec>& layers) {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerSpec& s) { return s.parametric(); }));
}

NetworkLayout plan_network(const ModelSpec& spec, std::size_t num_blocks, const AblationFlags& flags,
                           const HeadOptions& heads) {
  if (spec.classes < 2) throw ConfigError("model: need at least 2 classes, got " + std::to_string(spec.classes));
  if (spec.input_shape.empty() || numel(spec.input_shape) == 0) throw ConfigError("model: empty input shape");
  const std::size_t parametric = parametric_layer_count(spec.layers);
  if (num_blocks < 1) throw ConfigError("model: K must be >= 1");
  if (num_blocks > parametric) {
    throw ConfigError("model: K = " + std::to_string(num_blocks) + " exceeds the " + std::to_string(parametric) +
                      " parametric layers");
  }

  NetworkLayout layout;
  Shape shape = spec.input_shape;
  for (const auto& layer : spec.layers) {
    shape = infer_shape(layer, shape);
    layout.layer_outputs.push_back(shape);
    layout.main_parameters += layer.parameter_count();
  }

  // Unit starts: every parametric layer except that leading non-parametric
  // layers join the first unit.
  std::vector<std::size_t> unit_starts;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].parametric()) unit_starts.push_back(unit_starts.empty() ? 0 : i);
  }
  const std::size_t base = parametric / num_blocks, extra = parametric % num_blocks;
  std::size_t unit = 0;
  for (std::size_t k = 0; k < num_blocks; ++k) {
    const std::size_t count = base + (k < extra ? 1 : 0);
    const std::size_t begin = unit_starts[unit];
    unit += count;
    const std::size_t end = unit < unit_starts.size() ? unit_starts[unit] : spec.layers.size();
    layout.block_ranges.emplace_back(begin, end);
    layout.block_inputs.push_back(begin == 0 ? spec.input_shape : layout.layer_outputs[begin - 1]);
    layout.block_outputs.push_back(layout.layer_outputs[end - 1]);
  }

  layout.classifier_in = pooled_features(layout.block_outputs.back());
  layout.main_parameters += layout.classifier_in * spec.classes + spec.classes;

  for (std::size_t k = 0; k + 1 < num_blocks; ++k) {
    if (flags.use_adapter) {
      layout.head_inputs.push_back(pooled_features(infer_shape(spec.layers[layout.block_ranges[k + 1].first],
                                                               layout.block_outputs[k])));
    } else {
      layout.head_inputs.push_back(pooled_features(layout.block_outputs[k]));
    }
  }

  if (!layout.head_inputs.empty()) {
    const double budget = heads.budget_ratio * static_cast<double>(layout.main_parameters);
    std::size_t fixed = 0, per_unit = 0;
    for (auto in : layout.head_inputs) {
      fixed += spec.classes;
      per_unit += in + 1 + spec.classes;
    }
    auto total = [&](std::size_t h) {
      std::size_t t = 0;
      for (auto in : layout.head_inputs) t += head_cost(in, h, spec.classes);
      return t;
    };
    std::size_t hidden = heads.hidden;
    if (hidden == 0) {
      const std::size_t widest = *std::max_element(layout.head_inputs.begin(), layout.head_inputs.end());
      const double room = (budget - static_cast<double>(fixed)) / static_cast<double>(per_unit);
      hidden = room < 1.0 ? 0 : std::min(widest, static_cast<std::size_t>(std::floor(room)));
      if (hidden == 0) {
        throw ConfigError("model: auxiliary heads need at least " + std::to_string(total(1)) +
                          " parameters (hidden width 1) but the budget is " +
                          std::to_string(static_cast<std::size_t>(budget)));
      }
    } else if (static_cast<double>(total(hidden)) > budget) {
      throw ConfigError("model: auxiliary heads with hidden width " + std::to_string(hidden) + " need " +
                        std::to_string(total(hidden)) + " parameters but the budget is " +
                        std::to_string(static_cast<std::size_t>(budget)));
    }
    layout.head_hidden = hidden;
    layout.head_parameters = total(hidden);
  }
  return layout;
}

LocalBlock& PartitionedNetwork::block(std::size_t k) {
  check_block_index(*this, k, "block");
  return blocks_[k - 1];
}

AuxiliaryHead& PartitionedNetwork::head(std::size_t k) {
  if (k < 1 || k > heads_.size()) throw std::out_of_range("head: no auxiliary head for block " + std::to_string(k));
  return heads_[k - 1];
}

ManAdapter& PartitionedNetwork::adapter(std::size_t k) {
  if (k < 1 || k > adapters_.size()) throw std::out_of_range("adapter: no adapter for block " + std::to_string(k));
  return adapters_[k - 1];
}

std::vector<Parameter*> PartitionedNetwork::block_parameters(std::size_t k) {
  std::vector<Parameter*> out;
  for (auto& layer : block(k).layers) append(out, layer);
  return out;
}

std::vector<Parameter*> PartitionedNetwork::head_parameters(std::size_t k) {
  auto& h = head(k);
  return {&h.hidden_weight, &h.hidden_bias, &h.out_weight, &h.out_bias};
}

std::vector<Parameter*> PartitionedNetwork::adapter_parameters(std::size_t k) {
  auto& a = adapter(k);
  return {&a.eta_weight, &a.eta_bias, &a.bias};
}

std::vector<Parameter*> PartitionedNetwork::classifier_parameters() {
  return {&classifier_.weight, &classifier_.bias};
}

std::vector<Parameter*> PartitionedNetwork::main_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t k = 1; k <= num_blocks(); ++k) {
    auto b = block_parameters(k);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.push_back(&classifier_.weight);
  out.push_back(&classifier_.bias);
  return out;
}

std::vector<Parameter*> PartitionedNetwork::all_parameters() {
  auto out = main_parameters();
  for (std::size_t k = 1; k <= heads_.size(); ++k) {
    auto h = head_parameters(k);
    out.insert(out.end(), h.begin(), h.end());
  }
  for (std::size_t k = 1; k <= adapters_.size(); ++k) {
    auto a = adapter_parameters(k);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

std::size_t PartitionedNetwork::main_parameter_count() const {
  std::size_t n = classifier_.weight.size() + classifier_.bias.size();
  for (const auto& b : blocks_)
    for (const auto& l : b.layers) n += l.spec.parameter_count();
  return n;
}

std::size_t PartitionedNetwork::head_parameter_count() const {
  std::size_t n = 0;
  for (const auto& h : heads_) n += h.hidden_weight.size() + h.hidden_bias.size() + h.out_weight.size() + h.out_bias.size();
  return n;
}

std::size_t PartitionedNetwork::adapter_parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : adapters_) n += a.eta_weight.size() + a.eta_bias.size() + a.bias.size();
  return n;
}

PartitionedNetwork build_partitioned(const ModelSpec& spec, std::size_t num_blocks, const AblationFlags& flags,
                                     double momentum, std::uint64_t seed, const HeadOptions& heads) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ConfigError("model: momentum must lie in [0, 1], got " + std::to_string(momentum));
  }
  const NetworkLayout layout = plan_network(spec, num_blocks, flags, heads);

  PartitionedNetwork net;
  net.spec_ = spec;
  net.flags_ = flags;
  net.momentum_ = momentum;
  net.head_options_ = heads;
  net.head_hidden_ = layout.head_hidden;
  net.seed_ = seed;

  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < num_blocks; ++k) {
    LocalBlock block;
    block.index = k + 1;
    const auto [begin, end] = layout.block_ranges[k];
    for (std::size_t i = begin; i < end; ++i) {
      block.layers.push_back(
          make_layer(spec.layers[i], "block" + std::to_string(k + 1) + "." + std::to_string(i - begin), rng));
    }
    net.blocks_.push_back(std::move(block));
  }

  Layer c = make_layer(LayerSpec::linear(layout.classifier_in, spec.classes), "classifier", rng);
  net.classifier_ = {std::move(c.weight), std::move(c.bias)};

  for (std::size_t k = 0; k + 1 < num_blocks; ++k) {
    const std::string id = "head" + std::to_string(k + 1);
    Layer hidden = make_layer(LayerSpec::linear(layout.head_inputs[k], layout.head_hidden), id + ".hidden", rng);
    Layer out = make_layer(LayerSpec::linear(layout.head_hidden, spec.classes), id + ".out", rng);
    net.heads_.push_back({std::move(hidden.weight), std::move(hidden.bias), std::move(out.weight), std::move(out.bias)});
  }

  for (std::size_t k = 0; k + 1 < num_blocks; ++k) {
    const Layer& next = net.blocks_[k + 1].first_layer();
    const std::string id = "adapter" + std::to_string(k + 1);
    ManAdapter a;
    a.spec = next.spec;
    a.eta_weight = Parameter(id + ".eta_prime.weight", next.weight.read());
    a.eta_bias = Parameter(id + ".eta_prime.bias", next.bias.read());
    a.ema_weight = next.weight.read();
    a.ema_bias = next.bias.read();
    a.bias = Parameter(id + ".bias", Tensor::zeros({next.spec.out}));
    net.adapters_.push_back(std::move(a));
  }
  for (auto* p : net.all_parameters()) p->reset_reads();
  return net;
}

Tensor adapter_forward(ManAdapter& adapter, const AblationFlags& flags, const Tensor& x, const Binder& bind) {
  if (!flags.use_adapter) return x;
  Tensor out = apply_parametric(adapter.spec, x, bind(adapter.eta_weight), bind(adapter.eta_bias));
  if (flags.use_ema) out = add(out, apply_parametric(adapter.spec, x, adapter.ema_weight, adapter.ema_bias));
  if (flags.use_bias) out = add(out, bind(adapter.bias));
  return out;
}

Tensor block_forward(PartitionedNetwork& net, std::size_t k, const Tensor& x, const Binder& bind) {
  Tensor h = x;
  for (auto& layer : net.block(k).layers) h = apply_layer(layer, h, bind);
  return h;
}

Tensor head_forward(AuxiliaryHead& head, const Tensor& features, const Binder& bind) {
  Tensor h = pool_features(features);
  h = relu(linear(h, bind(head.hidden_weight), bind(head.hidden_bias)));
  return linear(h, bind(head.out_weight), bind(head.out_bias));
}

Tensor classifier_forward(PartitionedNetwork& net, const Tensor& features, const Binder& bind) {
  return linear(pool_features(features), bind(net.classifier().weight), bind(net.classifier().bias));
}

BlockForward forward_train_block(PartitionedNetwork& net, std::size_t k, const Tensor& x, Tape& tape) {
  check_block_index(net, k, "forward_train_block");
  const Binder bind{&tape};
  const Tensor out = block_forward(net, k, x, bind);
  if (k == net.num_blocks()) return {classifier_forward(net, out, bind), out};
  if (net.deployed()) throw std::logic_error("forward_train_block: deployed network has no auxiliary heads");
  const Tensor adapted = adapter_forward(net.adapter(k), net.flags(), out, bind);
  return {head_forward(net.head(k), adapted, bind), stop_gradient(out)};
}

Tensor forward_inference(PartitionedNetwork& net, const Tensor& x) {
  const Binder constants{};
  Tensor h = x.constant();
  for (std::size_t k = 1; k <= net.num_blocks(); ++k) h = block_forward(net, k, h, constants);
  return classifier_forward(net, h, constants);
}

std::vector<Tensor> forward_block_outputs(PartitionedNetwork& net, const Tensor& x) {
  const Binder constants{};
  std::vector<Tensor> outs;
  Tensor h = x.constant();
  for (std::size_t k = 1; k <= net.num_blocks(); ++k) {
    h = block_forward(net, k, h, constants);
    outs.push_back(h);
  }
  return outs;
}

Tensor forward_e2e(PartitionedNetwork& net, const Tensor& x, Tape& tape) {
  const Binder bind{&tape};
  Tensor h = x;
  for (std::size_t k = 1; k <= net.num_blocks(); ++k) h = block_forward(net, k, h, bind);
  return classifier_forward(net, h, bind);
}

void ema_update(ManAdapter& adapter, const Layer& next_first_layer, double momentum, bool raw_copy) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw std::invalid_argument("ema_update: momentum must lie in [0, 1], got " + std::to_string(momentum));
  }
  if (next_first_layer.weight.shape() != adapter.ema_weight.shape() ||
      next_first_layer.bias.shape() != adapter.ema_bias.shape()) {
    throw ShapeError("ema_update: expected target weight " + to_string(adapter.ema_weight.shape()) + ", got " +
                     to_string(next_first_layer.weight.shape()));
  }
  auto blend = [&](const Tensor& ema, std::span<const double> target) {
    std::vector<double> out(target.begin(), target.end());
    if (!raw_copy) {
      const auto e = ema.data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = momentum * e[i] + (1.0 - momentum) * target[i];
    }
    return Tensor(ema.shape(), std::move(out));
  };
  adapter.ema_weight = blend(adapter.ema_weight, next_first_layer.weight.value());
  adapter.ema_bias = blend(adapter.ema_bias, next_first_layer.bias.value());
  ++adapter.ema_updates;
}

PartitionedNetwork strip_adapters(const PartitionedNetwork& net) {
  PartitionedNetwork out = net;
  out.heads_.clear();
  out.adapters_.clear();
  out.flags_.use_adapter = false;
  out.deployed_ = true;
  return out;
}

}  // namespace localgrad
