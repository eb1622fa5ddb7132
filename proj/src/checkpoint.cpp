#include "localgrad/checkpoint.hpp"

#include <map>
#include <json.hpp>

#include "localgrad/container.hpp"
#include "localgrad/error.hpp"

namespace localgrad {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, PartitionedNetwork& net) {
  json header;
  header["input_shape"] = net.spec().input_shape;
  header["layers"] = to_string(net.spec().layers);
  header["classes"] = net.spec().classes;
  header["K"] = net.num_blocks();
  header["flags"] = {{"use_adapter", net.flags().use_adapter},
                     {"use_ema", net.flags().use_ema},
                     {"use_bias", net.flags().use_bias},
                     {"raw_copy_no_ema", net.flags().raw_copy_no_ema}};
  header["momentum"] = net.momentum();
  header["head_budget"] = net.head_options().budget_ratio;
  header["head_hidden"] = net.head_hidden();
  header["seed"] = net.seed();
  header["deployed"] = net.deployed();
  std::vector<std::uint64_t> ema_updates;
  for (const auto& a : net.adapters()) ema_updates.push_back(a.ema_updates);
  header["ema_updates"] = ema_updates;

  Container c;
  c.header = header.dump();
  for (auto* p : net.all_parameters()) c.tensors.push_back({p->id(), Tensor(p->shape(), {p->value().begin(), p->value().end()})});
  for (std::size_t k = 1; k <= net.adapters().size(); ++k) {
    const auto& a = net.adapter(k);
    const std::string id = "adapter" + std::to_string(k) + ".eta_ema";
    c.tensors.push_back({id + ".weight", a.ema_weight});
    c.tensors.push_back({id + ".bias", a.ema_bias});
  }
  write_container(path, kCheckpointMagic, c);
}

PartitionedNetwork load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path, kCheckpointMagic);
  json header;
  try {
    header = json::parse(c.header);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": unreadable header: " + e.what());
  }

  PartitionedNetwork net;
  try {
    ModelSpec spec;
    spec.input_shape = header.at("input_shape").get<Shape>();
    spec.layers = parse_layers(header.at("layers").get<std::string>());
    spec.classes = header.at("classes").get<std::size_t>();
    const auto& f = header.at("flags");
    AblationFlags flags{f.at("use_adapter").get<bool>(), f.at("use_ema").get<bool>(), f.at("use_bias").get<bool>(),
                        f.at("raw_copy_no_ema").get<bool>()};
    HeadOptions heads{header.at("head_budget").get<double>(), header.at("head_hidden").get<std::size_t>()};
    const auto k = header.at("K").get<std::size_t>();
    net = build_partitioned(spec, k, flags, header.at("momentum").get<double>(), header.at("seed").get<std::uint64_t>(),
                            heads);
    if (header.at("deployed").get<bool>()) net = strip_adapters(net);
    const auto ema_updates = header.at("ema_updates").get<std::vector<std::uint64_t>>();
    for (std::size_t i = 0; i < ema_updates.size() && i < net.adapters().size(); ++i) {
      net.adapters()[i].ema_updates = ema_updates[i];
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header field: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": inconsistent model description: " + e.what());
  }

  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : c.tensors) {
    if (!by_name.emplace(t.name, &t.value).second) throw FormatError(path.string() + ": duplicate tensor " + t.name);
  }
  auto take = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path.string() + ": missing tensor " + name);
    if (it->second->shape() != shape) {
      throw FormatError(path.string() + ": tensor " + name + " has shape " + to_string(it->second->shape()) +
                        ", expected " + to_string(shape));
    }
    const Tensor& t = *it->second;
    by_name.erase(it);
    return t;
  };
  for (auto* p : net.all_parameters()) p->assign(take(p->id(), p->shape()));
  for (std::size_t k = 1; k <= net.adapters().size(); ++k) {
    auto& a = net.adapter(k);
    const std::string id = "adapter" + std::to_string(k) + ".eta_ema";
    a.ema_weight = take(id + ".weight", a.ema_weight.shape()).constant();
    a.ema_bias = take(id + ".bias", a.ema_bias.shape()).constant();
  }
  if (!by_name.empty()) throw FormatError(path.string() + ": unexpected tensor " + by_name.begin()->first);
  for (auto* p : net.all_parameters()) p->reset_reads();
  return net;
}

}  // namespace localgrad
