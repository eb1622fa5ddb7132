#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "localgrad/network.hpp"

namespace localgrad {

enum class TrainMode { e2e, local, man };

std::string to_string(TrainMode mode);
TrainMode parse_mode(const std::string& text);

/// Analytic peak of simultaneously live doubles during one training step.
///
/// persistent: velocity buffers of every trained tensor (main network, plus
///   heads for local modes, plus adapter eta' and bias for man) and, for man,
///   the EMA copies.
/// per_block[k]: what block k's update keeps alive at once: its input, every
///   layer output of the block, head/adapter (or classifier) activations, and
///   the parameter gradients of its update set. e2e is one block spanning the
///   whole network.
/// peak = persistent + max(per_block).
struct MemoryReport {
  TrainMode mode = TrainMode::e2e;
  std::size_t num_blocks = 1;
  std::size_t batch = 0;
  std::uint64_t persistent = 0;
  std::vector<std::uint64_t> per_block;
  std::uint64_t peak_scalars = 0;
};

MemoryReport measure_peak_memory(const ModelSpec& spec, std::size_t num_blocks, TrainMode mode, std::size_t batch,
                                 const HeadOptions& heads = {});

/// {"mode","K","batch","peak_scalars","persistent","per_block":[...]}
std::string to_json(const MemoryReport& report);

}  // namespace localgrad
