#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "localgrad/layers.hpp"

namespace localgrad {

/// Switches for the MAN ablations. With use_adapter off the model is the
/// vanilla cross-entropy local-learning baseline.
struct AblationFlags {
  bool use_adapter = true;
  bool use_ema = true;   // include the EMA-tracked copy and update it each step
  bool use_bias = true;  // include the learnable bias
  bool raw_copy_no_ema = false;  // EMA copy is overwritten with the raw next-layer weights instead

  static AblationFlags vanilla() { return {false, false, false, false}; }
  bool operator==(const AblationFlags&) const = default;
};

/// Main-network description: per-sample input shape, body layers, classes.
/// The final classifier is implied (global pool for conv features, then linear).
struct ModelSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t classes = 0;

  bool operator==(const ModelSpec&) const = default;
};

struct HeadOptions {
  double budget_ratio = 0.05;  // total head parameters / main parameters
  std::size_t hidden = 0;      // 0 = widest width that fits the budget
};

/// Shape-only plan of a partitioned network, shared by the builder and the
/// memory accountant.
struct NetworkLayout {
  std::vector<std::pair<std::size_t, std::size_t>> block_ranges;  // [begin, end) into spec.layers
  std::vector<Shape> block_inputs;                                 // per sample
  std::vector<Shape> block_outputs;                                // per sample
  std::vector<Shape> layer_outputs;                                // per sample, one per body layer
  std::vector<std::size_t> head_inputs;                            // features entering head k
  std::size_t head_hidden = 0;
  std::size_t classifier_in = 0;
  std::size_t main_parameters = 0;
  std::size_t head_parameters = 0;
};

/// Validate `spec` and lay it out into `num_blocks` blocks. Each block starts
/// at a parametric layer and keeps the non-parametric layers that follow it;
/// blocks get near-equal parametric-layer counts with the remainder going to
/// the earliest blocks.
NetworkLayout plan_network(const ModelSpec& spec, std::size_t num_blocks, const AblationFlags& flags,
                           const HeadOptions& heads = {});

std::size_t parametric_layer_count(const std::vector<LayerSpec>& layers);

struct LocalBlock {
  std::size_t index = 0;  // 1-based
  std::vector<Layer> layers;

  /// n_1 of this block: its first parametric layer.
  Layer& first_layer() { return layers.front(); }
  const Layer& first_layer() const { return layers.front(); }
};

/// Pool -> linear(hidden) -> relu -> linear(classes).
struct AuxiliaryHead {
  Parameter hidden_weight;
  Parameter hidden_bias;
  Parameter out_weight;
  Parameter out_bias;
};

/// Momentum auxiliary adapter between block k and its head.
struct ManAdapter {
  LayerSpec spec;         // spec of the next block's first layer
  Parameter eta_weight;   // backprop-trained copy
  Parameter eta_bias;
  Tensor ema_weight;      // EMA-tracked copy; values only, never on a tape
  Tensor ema_bias;
  Parameter bias;         // learnable per-feature / per-channel bias
  std::uint64_t ema_updates = 0;
};

struct Classifier {
  Parameter weight;
  Parameter bias;
};

class PartitionedNetwork {
 public:
  const ModelSpec& spec() const { return spec_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const AblationFlags& flags() const { return flags_; }
  double momentum() const { return momentum_; }
  const HeadOptions& head_options() const { return head_options_; }
  std::size_t head_hidden() const { return head_hidden_; }
  std::uint64_t seed() const { return seed_; }
  /// True after strip_adapters: only blocks and the classifier remain.
  bool deployed() const { return deployed_; }

  std::vector<LocalBlock>& blocks() { return blocks_; }
  const std::vector<LocalBlock>& blocks() const { return blocks_; }
  std::vector<AuxiliaryHead>& heads() { return heads_; }
  const std::vector<AuxiliaryHead>& heads() const { return heads_; }
  std::vector<ManAdapter>& adapters() { return adapters_; }
  const std::vector<ManAdapter>& adapters() const { return adapters_; }
  Classifier& classifier() { return classifier_; }
  const Classifier& classifier() const { return classifier_; }

  LocalBlock& block(std::size_t k);
  AuxiliaryHead& head(std::size_t k);
  ManAdapter& adapter(std::size_t k);

  // Parameter groups; k is 1-based.
  std::vector<Parameter*> block_parameters(std::size_t k);
  std::vector<Parameter*> head_parameters(std::size_t k);
  /// Trainable adapter parameters: eta weight, eta bias, learnable bias.
  std::vector<Parameter*> adapter_parameters(std::size_t k);
  std::vector<Parameter*> classifier_parameters();
  /// Blocks plus classifier.
  std::vector<Parameter*> main_parameters();
  std::vector<Parameter*> all_parameters();

  std::size_t main_parameter_count() const;
  std::size_t head_parameter_count() const;
  std::size_t adapter_parameter_count() const;

 private:
  friend PartitionedNetwork build_partitioned(const ModelSpec&, std::size_t, const AblationFlags&, double,
                                              std::uint64_t, const HeadOptions&);
  friend PartitionedNetwork strip_adapters(const PartitionedNetwork&);

  ModelSpec spec_;
  AblationFlags flags_;
  double momentum_ = 0.995;
  HeadOptions head_options_;
  std::size_t head_hidden_ = 0;
  std::uint64_t seed_ = 0;
  bool deployed_ = false;
  std::vector<LocalBlock> blocks_;
  std::vector<AuxiliaryHead> heads_;
  std::vector<ManAdapter> adapters_;
  Classifier classifier_;
};

/// Build a K-block network. Adapters (one per block k < K) start with both
/// copies equal to the initialised first layer of block k+1 and a zero bias.
PartitionedNetwork build_partitioned(const ModelSpec& spec, std::size_t num_blocks, const AblationFlags& flags,
                                     double momentum, std::uint64_t seed, const HeadOptions& heads = {});

/// eta'(x) + eta''(x) + b, each term subject to the flags; identity when the
/// adapter is disabled. The EMA copy enters as constants.
Tensor adapter_forward(ManAdapter& adapter, const AblationFlags& flags, const Tensor& x, const Binder& bind);

struct BlockForward {
  Tensor logits;
  /// Block output. Stop-gradient'ed for k < K, raw for the last block.
  Tensor activation;
};

/// Training-time forward of block k (1-based) on `x`, recording block k, its
/// head and its adapter on `tape`. For k < K the logits come from the head
/// path; for k = K from the final classifier.
BlockForward forward_train_block(PartitionedNetwork& net, std::size_t k, const Tensor& x, Tape& tape);

/// Block k body only, with parameters supplied by `bind`.
Tensor block_forward(PartitionedNetwork& net, std::size_t k, const Tensor& x, const Binder& bind);
Tensor head_forward(AuxiliaryHead& head, const Tensor& features, const Binder& bind);
Tensor classifier_forward(PartitionedNetwork& net, const Tensor& features, const Binder& bind);

/// Deployment forward: blocks then classifier, no heads or adapters, no tape.
Tensor forward_inference(PartitionedNetwork& net, const Tensor& x);

/// Per-block outputs along the inference path.
std::vector<Tensor> forward_block_outputs(PartitionedNetwork& net, const Tensor& x);

/// End-to-end forward with every main parameter watched and no boundaries.
Tensor forward_e2e(PartitionedNetwork& net, const Tensor& x, Tape& tape);

/// ema <- m * ema + (1 - m) * next_first_layer, or a raw copy when
/// `raw_copy` is set. `next_first_layer` is read but not modified.
void ema_update(ManAdapter& adapter, const Layer& next_first_layer, double momentum, bool raw_copy = false);

/// Copy holding only the blocks and the classifier.
PartitionedNetwork strip_adapters(const PartitionedNetwork& net);

}  // namespace localgrad
