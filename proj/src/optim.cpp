#include "localgrad/optim.hpp"

#include <cmath>
#include <numbers>

#include "localgrad/error.hpp"

namespace localgrad {

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr: must be > 0, got " + std::to_string(lr));
  if (!(aux_lr >= 0.0)) throw ConfigError("aux_lr: must be >= 0, got " + std::to_string(aux_lr));
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum: must lie in [0, 1), got " + std::to_string(momentum));
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay: must be >= 0, got " + std::to_string(weight_decay));
  if (batch_size == 0) throw ConfigError("batch_size: must be >= 1");
  if (!(man_momentum >= 0.0 && man_momentum <= 1.0)) {
    throw ConfigError("man_momentum: must lie in [0, 1], got " + std::to_string(man_momentum));
  }
}

double lr_at(Schedule schedule, std::size_t epoch, std::size_t total_epochs, double lr_max) {
  if (schedule == Schedule::constant || total_epochs == 0) return lr_max;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_max * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

void sgd_step(std::span<const ParamUpdate> params, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  for (const auto& u : params) {
    for (double g : u.param->grad()) {
      if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient in " + u.param->id());
    }
  }
  for (const auto& u : params) {
    Parameter& p = *u.param;
    auto& v = state.velocity[p.id()];
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    auto theta = p.mutable_value();
    auto grad = p.mutable_grad();
    const double wd = u.decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + wd * theta[i];
      v[i] = momentum * v[i] + g;
      theta[i] -= lr * (g + momentum * v[i]);
    }
    p.zero_grad();
  }
}

}  // namespace localgrad
