#include "localgrad/analysis.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <random>
#include <set>

#include "localgrad/checkpoint.hpp"
#include "localgrad/container.hpp"
#include "localgrad/error.hpp"
#include "localgrad/ops.hpp"
#include "localgrad/optim.hpp"

namespace localgrad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix centred(const Tensor& t) {
  RowMatrix m = Eigen::Map<const RowMatrix>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                                            static_cast<Eigen::Index>(t.dim(1)));
  m.rowwise() -= m.colwise().mean();
  return m;
}

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, static_cast<std::size_t>(p - buf));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  return Tensor({rows.size(), d}, std::move(out));
}

/// Inference-path block outputs over `indices`, transformed per chunk.
template <typename Transform>
std::vector<Tensor> block_matrices(PartitionedNetwork& net, const Dataset& data, const std::vector<std::size_t>& indices,
                                   const std::vector<std::size_t>& blocks, Transform transform) {
  constexpr std::size_t kChunk = 1024;
  std::vector<std::vector<double>> values(blocks.size());
  std::vector<std::size_t> widths(blocks.size(), 0);
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::span<const std::size_t> idx(indices.data() + start, std::min(kChunk, indices.size() - start));
    const auto outs = forward_block_outputs(net, data.batch_inputs(idx));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Tensor m = transform(outs.at(blocks[i] - 1));
      widths[i] = m.dim(1);
      values[i].insert(values[i].end(), m.data().begin(), m.data().end());
    }
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) out.emplace_back(Shape{indices.size(), widths[i]}, std::move(values[i]));
  return out;
}

std::vector<std::size_t> all_blocks(const PartitionedNetwork& net, const std::vector<std::size_t>& blocks) {
  if (!blocks.empty()) {
    for (auto k : blocks) {
      if (k < 1 || k > net.num_blocks()) throw std::out_of_range("collect_activations: no block " + std::to_string(k));
    }
    return blocks;
  }
  std::vector<std::size_t> out(net.num_blocks());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = k + 1;
  return out;
}

}  // namespace

std::vector<Tensor> collect_activations(PartitionedNetwork& net, const Dataset& data,
                                        const std::vector<std::size_t>& indices,
                                        const std::vector<std::size_t>& blocks) {
  if (indices.empty()) throw std::invalid_argument("collect_activations: empty split");
  return block_matrices(net, data, indices, all_blocks(net, blocks), [](const Tensor& t) { return flatten(t); });
}

Tensor probe_features(const Tensor& block_output) {
  return block_output.rank() == 4 ? avgpool_global(block_output) : flatten(block_output);
}

double linear_probe(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                    std::span<const int> test_y, std::size_t classes, const ProbeConfig& cfg) {
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1)) {
    throw ShapeError("linear_probe: expected [n x d] train/test features with equal d, got " +
                     to_string(train_x.shape()) + " and " + to_string(test_x.shape()));
  }
  if (train_x.dim(0) != train_y.size() || test_x.dim(0) != test_y.size()) {
    throw ShapeError("linear_probe: feature rows and labels differ in count");
  }
  if (train_y.size() < classes) throw std::invalid_argument("linear_probe: fewer training samples than classes");
  if (std::set<int>(train_y.begin(), train_y.end()).size() < 2) {
    throw std::invalid_argument("linear_probe: training labels contain a single class");
  }
  if (test_y.empty()) throw std::invalid_argument("linear_probe: empty held-out split");

  const std::size_t n = train_x.dim(0), d = train_x.dim(1);
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  const auto tx = train_x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += tx[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (tx[i * d + j] - mean[j]) * (tx[i * d + j] - mean[j]);
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }
  auto standardize = [&](const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (out[i * d + j] - mean[j]) / sd[j];
    return Tensor(x.shape(), std::move(out));
  };
  const Tensor train = standardize(train_x);
  const Tensor test = standardize(test_x);

  std::mt19937_64 rng(cfg.seed);
  Layer probe = make_layer(LayerSpec::linear(d, classes), "probe", rng);
  OptimizerState opt;
  const std::vector<ParamUpdate> group{{&probe.weight, false}, {&probe.bias, false}};
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(Schedule::cosine, epoch, cfg.epochs, cfg.lr);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
      labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_y[idx[i]];
      Tape tape;
      const Tensor logits = linear(gather_rows(train, idx), tape.watch(probe.weight), tape.watch(probe.bias));
      tape.backward(softmax_cross_entropy(logits, labels));
      sgd_step(group, opt, lr, 0.9, 0.0);
    }
  }
  const auto pred = argmax_rows(linear(test, probe.weight.read(), probe.bias.read()));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test_y[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ProbeReport probe_network(PartitionedNetwork& net, const Dataset& data, const ProbeConfig& cfg) {
  ProbeReport report;
  report.config = cfg;
  report.checksum = parameter_checksum(net);
  const auto blocks = all_blocks(net, {});
  const auto train = block_matrices(net, data, data.train, blocks, probe_features);
  const auto test = block_matrices(net, data, data.test, blocks, probe_features);
  const auto train_y = data.batch_labels(data.train);
  const auto test_y = data.batch_labels(data.test);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    report.accuracy.push_back(linear_probe(train[k], train_y, test[k], test_y, data.classes, cfg));
  }
  return report;
}

std::string parameter_checksum(const PartitionedNetwork& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::span<const double> values) {
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) h = (h ^ ((bits >> (8 * i)) & 0xff)) * 0x100000001b3ULL;
    }
  };
  for (const auto& b : net.blocks())
    for (const auto& l : b.layers) {
      mix(l.weight.value());
      mix(l.bias.value());
    }
  mix(net.classifier().weight.value());
  mix(net.classifier().bias.value());
  for (const auto& h : net.heads()) {
    mix(h.hidden_weight.value());
    mix(h.hidden_bias.value());
    mix(h.out_weight.value());
    mix(h.out_bias.value());
  }
  for (const auto& a : net.adapters()) {
    mix(a.eta_weight.value());
    mix(a.eta_bias.value());
    mix(a.bias.value());
    mix(a.ema_weight.data());
    mix(a.ema_bias.data());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2) {
    throw ShapeError("linear_cka: expected [n x d] matrices, got " + to_string(x.shape()) + " and " +
                     to_string(y.shape()));
  }
  if (x.dim(0) != y.dim(0)) {
    throw ShapeError("linear_cka: row counts differ: " + std::to_string(x.dim(0)) + " vs " + std::to_string(y.dim(0)));
  }
  if (x.dim(0) < 2) throw ShapeError("linear_cka: need at least 2 samples");
  const RowMatrix xc = centred(x);
  const RowMatrix yc = centred(y);
  auto degenerate = [](const RowMatrix& c, const Tensor& raw) {
    double raw_norm = 0.0;
    for (double v : raw.data()) raw_norm += v * v;
    return c.norm() <= 1e-12 * std::sqrt(raw_norm) || c.norm() == 0.0;
  };
  if (degenerate(xc, x) || degenerate(yc, y)) throw ZeroVarianceError("linear_cka: constant representation");
  const double cross = (yc.transpose() * xc).squaredNorm();
  const double self_x = (xc.transpose() * xc).norm();
  const double self_y = (yc.transpose() * yc).norm();
  return cross / (self_x * self_y);
}

CkaMatrix cka_report(PartitionedNetwork& a, PartitionedNetwork& b, const Dataset& data,
                     const std::vector<std::size_t>& indices, std::string name_a, std::string name_b) {
  if (a.spec().input_shape != b.spec().input_shape) throw ShapeError("cka_report: models take different inputs");
  if (a.num_blocks() != b.num_blocks()) throw ShapeError("cka_report: models have different block counts");
  const auto xa = collect_activations(a, data, indices);
  const auto xb = collect_activations(b, data, indices);
  CkaMatrix m{std::move(name_a), std::move(name_b), {}};
  for (const auto& ai : xa) {
    std::vector<double> row;
    for (const auto& bj : xb) row.push_back(linear_cka(ai, bj));
    m.values.push_back(std::move(row));
  }
  return m;
}

std::string to_csv(const CkaMatrix& matrix) {
  std::string out = "block_a,block_b,cka\n";
  for (std::size_t i = 0; i < matrix.values.size(); ++i)
    for (std::size_t j = 0; j < matrix.values[i].size(); ++j)
      out += std::to_string(i + 1) + ',' + std::to_string(j + 1) + ',' + fmt(matrix.values[i][j]) + '\n';
  return out;
}

std::string to_csv(const ProbeReport& report) {
  std::string out = "block,probe_accuracy,epochs,lr,checksum\n";
  for (std::size_t k = 0; k < report.accuracy.size(); ++k) {
    out += std::to_string(k + 1) + ',' + fmt(report.accuracy[k]) + ',' + std::to_string(report.config.epochs) + ',' +
           fmt(report.config.lr) + ',' + report.checksum + '\n';
  }
  return out;
}

void export_activations(const std::filesystem::path& path, PartitionedNetwork& net, const Dataset& data,
                        const std::vector<std::size_t>& indices) {
  const auto acts = collect_activations(net, data, indices);
  Container c;
  nlohmann::json header;
  header["samples"] = indices.size();
  header["blocks"] = acts.size();
  header["checksum"] = parameter_checksum(net);
  c.header = header.dump();
  for (std::size_t k = 0; k < acts.size(); ++k) c.tensors.push_back({"block" + std::to_string(k + 1), acts[k]});
  std::vector<double> labels;
  for (auto i : indices) labels.push_back(data.labels[i]);
  c.tensors.push_back({"labels", Tensor({indices.size()}, std::move(labels))});
  write_container(path, kActivationMagic, c);
}

}  // namespace localgrad
