#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "localgrad/parameter.hpp"
#include "localgrad/tape.hpp"

namespace localgrad {

enum class LayerKind { linear, conv2d, relu, avgpool_global, flatten };
enum class Init { kaiming_uniform, zeros };

/// One layer of the main network. Shape rules, per sample:
///   linear  [in] -> [out]
///   conv2d  [in x h x w] -> [out x h' x w'], stride 1, h' = h - k + 1 or h with same padding
///   relu    any -> same
///   avgpool_global [c x h x w] -> [c]
///   flatten any -> [prod]
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  bool same_padding = false;
  Init init = Init::kaiming_uniform;

  static LayerSpec linear(std::size_t in, std::size_t out, Init init = Init::kaiming_uniform);
  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, bool same_padding = false,
                          Init init = Init::kaiming_uniform);
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec avgpool_global() { return {LayerKind::avgpool_global}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }

  bool parametric() const { return kind == LayerKind::linear || kind == LayerKind::conv2d; }
  std::size_t padding() const { return same_padding ? (kernel - 1) / 2 : 0; }
  Shape weight_shape() const;
  Shape bias_shape() const { return {out}; }
  std::size_t parameter_count() const;

  bool operator==(const LayerSpec&) const = default;
};

/// Text form used in configs and checkpoints: `linear:IN:OUT`,
/// `conv2d:IN:OUT:K[:same]`, `relu`, `avgpool`, `flatten`, with an optional
/// trailing `:zeros` on parametric layers.
std::string to_string(const LayerSpec& spec);
LayerSpec parse_layer(std::string_view text);
std::vector<LayerSpec> parse_layers(std::string_view comma_separated);
std::string to_string(const std::vector<LayerSpec>& specs);

/// Per-sample output shape; throws ShapeError when `sample_in` does not fit.
Shape infer_shape(const LayerSpec& spec, const Shape& sample_in);

/// Instantiated layer. Non-parametric layers leave weight/bias empty.
struct Layer {
  LayerSpec spec;
  Parameter weight;
  Parameter bias;
};

Layer make_layer(const LayerSpec& spec, const std::string& id_prefix, std::mt19937_64& rng);

/// Supplies parameter tensors to a forward pass: watched on a tape when
/// training, plain constants otherwise.
struct Binder {
  Tape* tape = nullptr;
  Tensor operator()(Parameter& p) const { return tape ? tape->watch(p) : p.read(); }
};

/// Apply a parametric layer given explicit weight and bias tensors.
Tensor apply_parametric(const LayerSpec& spec, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor apply_layer(Layer& layer, const Tensor& x, const Binder& bind);

}  // namespace localgrad
