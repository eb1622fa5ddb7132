#include "localgrad/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>

#include "localgrad/error.hpp"
#include "localgrad/ops.hpp"

namespace localgrad {
namespace {

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, static_cast<std::size_t>(p - buf));
}

double checked(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw NumericError("non-finite loss " + fmt(loss) + " in " + where);
  return loss;
}

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return hits;
}

void audit(PartitionedNetwork& net, const std::vector<ParamUpdate>& group, const std::string& loss, TrainState& state) {
  if (!state.audit_isolation) return;
  std::set<const Parameter*> allowed;
  for (const auto& u : group) allowed.insert(u.param);
  for (auto* p : net.all_parameters()) {
    if (allowed.count(p)) continue;
    const auto g = p->grad();
    if (std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) {
      state.leaks.push_back(p->id() + " <- " + loss);
    }
  }
}

void apply(std::vector<ParamUpdate>& group, const std::string& loss, TrainState& state, double lr, const SgdConfig& cfg) {
  sgd_step(group, state.optimizer, lr, cfg.momentum, cfg.weight_decay);
  for (const auto& u : group) state.update_sources[u.param->id()].insert(loss);
}

void add_group(std::vector<ParamUpdate>& group, const std::vector<Parameter*>& params, bool decay = true) {
  for (auto* p : params) group.push_back({p, decay});
}

}  // namespace

std::string to_csv_line(const MetricsRow& r) {
  return std::to_string(r.epoch) + ',' + r.split + ',' + r.mode + ',' + std::to_string(r.block) + ',' + fmt(r.loss) +
         ',' + fmt(r.total_objective) + ',' + fmt(r.accuracy) + ',' + fmt(r.lr) + ',' + std::to_string(r.peak_scalars);
}

TrainMode mode_of(const PartitionedNetwork& net) { return net.flags().use_adapter ? TrainMode::man : TrainMode::local; }

StepMetrics local_train_step(PartitionedNetwork& net, const Batch& batch, const SgdConfig& cfg, TrainState& state,
                             double lr) {
  const std::size_t K = net.num_blocks();
  if (K < 2) throw std::logic_error("local_train_step: needs K >= 2, use e2e_train_step");
  const double aux_lr = cfg.aux_lr > 0.0 ? lr * cfg.aux_lr / cfg.lr : lr;
  const AblationFlags& flags = net.flags();

  state.last_step_events.clear();
  StepMetrics metrics;
  Tape tape;
  Tensor x = batch.inputs.constant();
  for (std::size_t k = 1; k <= K; ++k) {
    const std::string label = k == K ? "global" : "L" + std::to_string(k);
    BlockForward out = forward_train_block(net, k, x, tape);
    const Tensor loss = softmax_cross_entropy(out.logits, batch.labels);
    metrics.block_losses.push_back(
        checked(loss.item(), "block " + std::to_string(k) + " at step " + std::to_string(state.step)));
    tape.backward(loss);

    std::vector<ParamUpdate> main_group, aux_group;
    add_group(main_group, net.block_parameters(k));
    if (k == K) {
      add_group(main_group, net.classifier_parameters());
      metrics.correct = count_correct(out.logits, batch.labels);
    } else {
      add_group(aux_group, net.head_parameters(k));
      if (flags.use_adapter) {
        auto& a = net.adapter(k);
        aux_group.push_back({&a.eta_weight, true});
        aux_group.push_back({&a.eta_bias, true});
        if (flags.use_bias) aux_group.push_back({&a.bias, false});
      }
    }
    if (state.audit_isolation) {
      auto both = main_group;
      both.insert(both.end(), aux_group.begin(), aux_group.end());
      audit(net, both, label, state);
    }
    apply(main_group, label, state, lr, cfg);
    apply(aux_group, label, state, aux_lr, cfg);
    state.last_step_events.push_back("update:block" + std::to_string(k));
    x = out.activation;
  }

  if (flags.use_adapter && flags.use_ema) {
    for (std::size_t k = 1; k < K; ++k) {
      ema_update(net.adapter(k), net.block(k + 1).first_layer(), net.momentum(), flags.raw_copy_no_ema);
      state.last_step_events.push_back("ema:adapter" + std::to_string(k));
    }
  }
  metrics.total = std::accumulate(metrics.block_losses.begin(), metrics.block_losses.end(), 0.0);
  ++state.step;
  return metrics;
}

StepMetrics e2e_train_step(PartitionedNetwork& net, const Batch& batch, const SgdConfig& cfg, TrainState& state,
                           double lr) {
  state.last_step_events.clear();
  Tape tape;
  const Tensor logits = forward_e2e(net, batch.inputs.constant(), tape);
  const Tensor loss = softmax_cross_entropy(logits, batch.labels);
  StepMetrics metrics;
  metrics.block_losses.push_back(checked(loss.item(), "end-to-end loss at step " + std::to_string(state.step)));
  metrics.total = metrics.block_losses.back();
  metrics.correct = count_correct(logits, batch.labels);
  tape.backward(loss);
  std::vector<ParamUpdate> group;
  add_group(group, net.main_parameters());
  audit(net, group, "global", state);
  apply(group, "global", state, lr, cfg);
  for (std::size_t k = 1; k <= net.num_blocks(); ++k) state.last_step_events.push_back("update:block" + std::to_string(k));
  ++state.step;
  return metrics;
}

StepMetrics total_objective(PartitionedNetwork& net, const Batch& batch) {
  const Binder constants{};
  StepMetrics metrics;
  Tensor x = batch.inputs.constant();
  const std::size_t K = net.num_blocks();
  for (std::size_t k = 1; k <= K; ++k) {
    const Tensor out = block_forward(net, k, x, constants);
    Tensor logits;
    if (k == K) {
      logits = classifier_forward(net, out, constants);
      metrics.correct = count_correct(logits, batch.labels);
    } else {
      logits = head_forward(net.head(k), adapter_forward(net.adapter(k), net.flags(), out, constants), constants);
    }
    metrics.block_losses.push_back(softmax_cross_entropy(logits, batch.labels).item());
    x = out;
  }
  metrics.total = std::accumulate(metrics.block_losses.begin(), metrics.block_losses.end(), 0.0);
  return metrics;
}

Evaluation evaluate(PartitionedNetwork& net, const Dataset& data, const std::vector<std::size_t>& indices) {
  constexpr std::size_t kChunk = 1024;
  Evaluation e;
  if (indices.empty()) return e;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::span<const std::size_t> idx(indices.data() + start, std::min(kChunk, indices.size() - start));
    const auto labels = data.batch_labels(idx);
    const Tensor logits = forward_inference(net, data.batch_inputs(idx));
    e.loss += softmax_cross_entropy(logits, labels).item() * static_cast<double>(idx.size());
    hits += count_correct(logits, labels);
  }
  e.loss /= static_cast<double>(indices.size());
  e.accuracy = static_cast<double>(hits) / static_cast<double>(indices.size());
  return e;
}

FitResult fit(PartitionedNetwork& net, const Dataset& data, const SgdConfig& cfg, TrainMode mode,
              bool audit_isolation) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("fit: empty training split");
  if (mode != TrainMode::e2e && mode_of(net) != mode) {
    throw ConfigError("fit: mode " + to_string(mode) + " does not match the network's adapter flags");
  }
  const std::size_t K = net.num_blocks();
  const std::string mode_name = to_string(mode);
  const std::uint64_t peak =
      measure_peak_memory(net.spec(), K, mode, cfg.batch_size, net.head_options()).peak_scalars;

  FitResult result;
  TrainState& state = result.state;
  state.audit_isolation = audit_isolation;

  auto record_test = [&](std::size_t epoch, double lr) {
    const Evaluation e = evaluate(net, data, data.test);
    state.history.push_back({epoch, "test", mode_name, 0, e.loss, e.loss, e.accuracy, lr, peak});
    return 1.0 - e.accuracy;
  };

  result.final_test_error = record_test(0, lr_at(cfg.schedule, 0, cfg.epochs, cfg.lr));
  result.best_test_error = result.final_test_error;

  std::vector<std::size_t> order = data.train;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch, cfg.epochs, cfg.lr);
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
    order = data.train;
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t blocks_logged = mode == TrainMode::e2e ? 1 : K;
    std::vector<double> loss_sum(blocks_logged, 0.0);
    double total_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Batch batch{data.batch_inputs(idx), data.batch_labels(idx)};
      StepMetrics m;
      try {
        m = (mode == TrainMode::e2e || K == 1) ? e2e_train_step(net, batch, cfg, state, lr)
                                               : local_train_step(net, batch, cfg, state, lr);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(state.step) + ": " +
                           e.what());
      }
      const double w = static_cast<double>(idx.size());
      for (std::size_t k = 0; k < blocks_logged && k < m.block_losses.size(); ++k) loss_sum[k] += m.block_losses[k] * w;
      total_sum += m.total * w;
      hits += m.correct;
    }
    state.epoch = epoch + 1;
    const double n = static_cast<double>(order.size());
    const double acc = static_cast<double>(hits) / n;
    for (std::size_t k = 0; k < blocks_logged; ++k) {
      const std::size_t block = mode == TrainMode::e2e ? 0 : k + 1;
      state.history.push_back({epoch + 1, "train", mode_name, block, loss_sum[k] / n, total_sum / n, acc, lr, peak});
    }
    const double err = record_test(epoch + 1, lr);
    result.final_test_error = err;
    result.best_test_error = std::min(result.best_test_error, err);
  }
  return result;
}

}  // namespace localgrad
