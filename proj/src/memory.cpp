#include "localgrad/memory.hpp"

#include <algorithm>
#include <json.hpp>

#include "localgrad/error.hpp"

namespace localgrad {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::e2e:
      return "e2e";
    case TrainMode::local:
      return "local";
    case TrainMode::man:
      return "man";
  }
  return "?";
}

TrainMode parse_mode(const std::string& text) {
  if (text == "e2e") return TrainMode::e2e;
  if (text == "local") return TrainMode::local;
  if (text == "man") return TrainMode::man;
  throw ConfigError("mode: expected e2e, local or man, got '" + text + "'");
}

MemoryReport measure_peak_memory(const ModelSpec& spec, std::size_t num_blocks, TrainMode mode, std::size_t batch,
                                 const HeadOptions& heads) {
  const std::size_t k_eff = mode == TrainMode::e2e ? 1 : num_blocks;
  AblationFlags flags = AblationFlags::vanilla();
  if (mode == TrainMode::man) flags = AblationFlags{};
  const NetworkLayout layout = plan_network(spec, k_eff, flags, heads);
  const std::uint64_t b = batch;
  const std::uint64_t classes = spec.classes;

  MemoryReport report;
  report.mode = mode;
  report.num_blocks = num_blocks;
  report.batch = batch;
  report.persistent = layout.main_parameters + layout.head_parameters;

  for (std::size_t k = 0; k < k_eff; ++k) {
    const auto [begin, end] = layout.block_ranges[k];
    std::uint64_t acts = numel(layout.block_inputs[k]);
    std::uint64_t grads = 0;
    for (std::size_t i = begin; i < end; ++i) {
      acts += numel(layout.layer_outputs[i]);
      grads += spec.layers[i].parameter_count();
    }
    const Shape& out = layout.block_outputs[k];
    const bool pooled = out.size() == 3;
    if (k + 1 == k_eff) {
      if (pooled) acts += out[0];
      acts += classes;
      grads += layout.classifier_in * classes + classes;
    } else {
      std::uint64_t head_in = layout.head_inputs[k];
      if (mode == TrainMode::man) {
        const LayerSpec& next = spec.layers[layout.block_ranges[k + 1].first];
        const std::uint64_t adapted = numel(layout.layer_outputs[layout.block_ranges[k + 1].first]);
        acts += 3 * adapted;  // eta' output, eta'' output, their biased sum
        grads += next.parameter_count() + next.out;
        report.persistent += 2 * next.parameter_count() + next.out;  // velocities of eta' and b, EMA copy
        if (adapted != head_in) acts += head_in;  // pooled adapter output
      } else if (pooled) {
        acts += head_in;
      }
      acts += 2 * layout.head_hidden + classes;
      grads += head_in * layout.head_hidden + layout.head_hidden + layout.head_hidden * classes + classes;
    }
    // Activations scale with the batch; gradients do not.
    report.per_block.push_back(acts * b + grads);
  }
  report.peak_scalars = report.persistent + *std::max_element(report.per_block.begin(), report.per_block.end());
  return report;
}

std::string to_json(const MemoryReport& report) {
  nlohmann::json j;
  j["mode"] = to_string(report.mode);
  j["K"] = report.num_blocks;
  j["batch"] = report.batch;
  j["peak_scalars"] = report.peak_scalars;
  j["persistent"] = report.persistent;
  j["per_block"] = report.per_block;
  return j.dump(2);
}

}  // namespace localgrad
