#include "localgrad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "localgrad/error.hpp"
#include "localgrad/tape.hpp"

namespace localgrad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

[[noreturn]] void shape_error(const char* op, const std::string& expected, const Shape& actual) {
  throw ShapeError(std::string(op) + ": expected " + expected + ", got " + to_string(actual));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) shape_error(op, what, t.shape());
}

std::vector<double> buffer(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "rank-2 lhs [m x k]");
  require_rank("matmul", b, 2, "rank-2 rhs [k x n]");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", "rhs [" + std::to_string(k) + " x n]", b.shape());

  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tensor result({m, n}, std::move(out));

  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(result, {&a, &b}, [a = a.constant(), b = b.constant(), m, k, n](auto g, auto sinks) {
    ConstMap grad(g.data(), m, n);
    if (sinks[0]) {
      Map(sinks[0]->data(), m, k).noalias() += grad * ConstMap(b.data().data(), k, n).transpose();
    }
    if (sinks[1]) {
      Map(sinks[1]->data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * grad;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  std::vector<double> out = buffer(a.data());
  const auto bd = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    Tensor result(a.shape(), std::move(out));
    Tape* tape = common_tape({&a, &b});
    if (!tape) return result;
    return tape->record(result, {&a, &b}, [](auto g, auto sinks) {
      for (auto* s : sinks) {
        if (!s) continue;
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
      }
    });
  }

  if (a.rank() < 2 || b.rank() != 1 || b.size() != a.dim(1)) {
    shape_error("add", "rhs " + to_string(a.shape()) + " or broadcast bias [" +
                           (a.rank() >= 2 ? std::to_string(a.dim(1)) : std::string("?")) + "]",
                b.shape());
  }
  const std::size_t outer = a.dim(0), channels = a.dim(1);
  const std::size_t inner = a.size() / (outer * channels);
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* row = out.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += bd[c];
    }
  }
  Tensor result(a.shape(), std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(result, {&a, &b}, [outer, channels, inner](auto g, auto sinks) {
    if (sinks[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i];
    }
    if (sinks[1]) {
      for (std::size_t n = 0; n < outer; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double* row = g.data() + (n * channels + c) * inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += row[i];
          (*sinks[1])[c] += acc;
        }
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", to_string(a.shape()), b.shape());
  std::vector<double> out = buffer(a.data());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Tensor result(a.shape(), std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(result, {&a, &b}, [a = a.constant(), b = b.constant()](auto g, auto sinks) {
    if (sinks[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * b[i];
    }
    if (sinks[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*sinks[1])[i] += g[i] * a[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out = buffer(x.data());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Tensor result(x.shape(), std::move(out));
  Tape* tape = common_tape({&x});
  if (!tape) return result;

  constexpr double kKinkRadius = 1e-6;
  std::uint64_t pattern = 0xcbf29ce484222325ULL;
  std::size_t near_kink = 0;
  for (double v : x.data()) {
    pattern = (pattern ^ static_cast<std::uint64_t>(v > 0.0)) * 0x100000001b3ULL;
    near_kink += std::abs(v) <= kKinkRadius;
  }
  tape->note_activation_pattern(pattern, near_kink);

  return tape->record(result, {&x}, [x = x.constant()](auto g, auto sinks) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) (*sinks[0])[i] += g[i];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t padding) {
  require_rank("conv2d", x, 4, "input [n x c x h x w]");
  require_rank("conv2d", w, 4, "kernel [o x c x k x k]");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) {
    shape_error("conv2d", "kernel [o x " + std::to_string(cin) + " x k x k]", w.shape());
  }
  if (h + 2 * padding < k || wd + 2 * padding < k) {
    shape_error("conv2d", "spatial extent >= kernel " + std::to_string(k) + " after padding", x.shape());
  }
  const std::size_t oh = h + 2 * padding - k + 1, ow = wd + 2 * padding - k + 1;
  const auto p = static_cast<std::ptrdiff_t>(padding);

  // Visits every (output, kernel tap, input) triple whose input lies inside
  // the unpadded image.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t i = 0; i < oh; ++i) {
              const auto r = static_cast<std::ptrdiff_t>(i + u) - p;
              if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t v = 0; v < k; ++v)
                for (std::size_t j = 0; j < ow; ++j) {
                  const auto s = static_cast<std::ptrdiff_t>(j + v) - p;
                  if (s < 0 || s >= static_cast<std::ptrdiff_t>(wd)) continue;
                  const std::size_t out_idx = ((n * cout + o) * oh + i) * ow + j;
                  const std::size_t w_idx = ((o * cin + c) * k + u) * k + v;
                  const std::size_t x_idx = ((n * cin + c) * h + static_cast<std::size_t>(r)) * wd +
                                            static_cast<std::size_t>(s);
                  fn(out_idx, w_idx, x_idx);
                }
            }
  };

  std::vector<double> out(batch * cout * oh * ow, 0.0);
  {
    const auto xd = x.data();
    const auto wdata = w.data();
    for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) { out[oi] += wdata[wi] * xd[xi]; });
  }
  Tensor result({batch, cout, oh, ow}, std::move(out));
  Tape* tape = common_tape({&x, &w});
  if (!tape) return result;
  return tape->record(result, {&x, &w}, [x = x.constant(), w = w.constant(), for_each_tap](auto g, auto sinks) {
    for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) {
      if (sinks[0]) (*sinks[0])[xi] += g[oi] * w[wi];
      if (sinks[1]) (*sinks[1])[wi] += g[oi] * x[xi];
    });
  });
}

Tensor avgpool_global(const Tensor& x) {
  require_rank("avgpool_global", x, 4, "input [n x c x h x w]");
  const std::size_t outer = x.dim(0) * x.dim(1);
  const std::size_t inner = x.dim(2) * x.dim(3);
  const auto xd = x.data();
  std::vector<double> out(outer, 0.0);
  for (std::size_t i = 0; i < outer; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) acc += xd[i * inner + j];
    out[i] = acc / static_cast<double>(inner);
  }
  Tensor result({x.dim(0), x.dim(1)}, std::move(out));
  Tape* tape = common_tape({&x});
  if (!tape) return result;
  return tape->record(result, {&x}, [outer, inner](auto g, auto sinks) {
    const double w = 1.0 / static_cast<double>(inner);
    for (std::size_t i = 0; i < outer; ++i)
      for (std::size_t j = 0; j < inner; ++j) (*sinks[0])[i * inner + j] += g[i] * w;
  });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) shape_error("flatten", "rank >= 1", x.shape());
  const std::size_t n = x.dim(0);
  Tensor result = x.reshaped({n, n ? x.size() / n : 0});
  Tape* tape = common_tape({&x});
  if (!tape) return result;
  return tape->record(result, {&x}, [](auto g, auto sinks) {
    for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out = buffer(x.data());
  for (auto& v : out) v *= factor;
  Tensor result(x.shape(), std::move(out));
  Tape* tape = common_tape({&x});
  if (!tape) return result;
  return tape->record(result, {&x}, [factor](auto g, auto sinks) {
    for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor result = Tensor::scalar(acc);
  Tape* tape = common_tape({&x});
  if (!tape) return result;
  return tape->record(result, {&x}, [](auto g, auto sinks) {
    for (auto& v : *sinks[0]) v += g[0];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2, "logits [batch x classes]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (batch == 0) shape_error("softmax_cross_entropy", "batch >= 1", logits.shape());
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: expected " + std::to_string(batch) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                              std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }

  const auto z = logits.data();
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = z.data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - peak);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(row[c] - peak - log_denom);
    loss -= row[labels[i]] - peak - log_denom;
  }
  loss /= static_cast<double>(batch);

  Tensor result = Tensor::scalar(loss);
  Tape* tape = common_tape({&logits});
  if (!tape) return result;
  std::vector<int> owned(labels.begin(), labels.end());
  return tape->record(result, {&logits},
                      [probs = std::move(probs), owned = std::move(owned), batch, classes](auto g, auto sinks) {
                        const double w = g[0] / static_cast<double>(batch);
                        auto& s = *sinks[0];
                        for (std::size_t i = 0; i < batch; ++i) {
                          for (std::size_t c = 0; c < classes; ++c) s[i * classes + c] += w * probs[i * classes + c];
                          s[i * classes + static_cast<std::size_t>(owned[i])] -= w;
                        }
                      });
}

Tensor stop_gradient(const Tensor& x) {
  Tape* tape = common_tape({&x});
  if (!tape) return x;
  return tape->boundary(x);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank("argmax_rows", logits, 2, "logits [batch x classes]");
  const std::size_t classes = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = logits.data().data() + i * classes;
    out[i] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace localgrad
