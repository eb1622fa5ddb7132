#include "localgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace localgrad {
namespace {

struct Evaluation {
  double loss;
  std::uint64_t pattern;
};

Evaluation evaluate(const std::function<Tensor(Tape&)>& loss_fn) {
  Tape tape;
  const Tensor loss = loss_fn(tape);
  return {loss.item(), tape.activation_pattern()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss_fn, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto* p : params) p->zero_grad();

  std::uint64_t base_pattern = 0;
  {
    Tape tape;
    const Tensor loss = loss_fn(tape);
    if (!std::isfinite(loss.item())) {
      report.failure = "non-finite loss at the unperturbed point";
      return report;
    }
    tape.backward(loss);
    base_pattern = tape.activation_pattern();
  }

  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    auto value = p.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const std::string where = p.id() + "[" + std::to_string(i) + "]";
      const double a = analytic[pi][i];
      if (!std::isfinite(a)) {
        report.failure = "non-finite analytic gradient at " + where;
        report.passed = false;
        for (auto* q : params) q->zero_grad();
        return report;
      }
      const double original = value[i];
      value[i] = original + options.step;
      const Evaluation plus = evaluate(loss_fn);
      value[i] = original - options.step;
      const Evaluation minus = evaluate(loss_fn);
      value[i] = original;

      if (!std::isfinite(plus.loss) || !std::isfinite(minus.loss)) {
        report.failure = "non-finite loss when perturbing " + where;
        report.passed = false;
        for (auto* q : params) q->zero_grad();
        return report;
      }
      if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
        ++report.excluded;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.worst_location.empty()) {
        report.max_relative_error = std::max(rel, report.max_relative_error);
        if (rel >= report.max_relative_error) report.worst_location = where;
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

}  // namespace localgrad
