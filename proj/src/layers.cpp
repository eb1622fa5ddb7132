#include "localgrad/layers.hpp"

#include <cmath>
#include <sstream>

#include "localgrad/error.hpp"
#include "localgrad/ops.hpp"

namespace localgrad {

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out, Init init) {
  LayerSpec s;
  s.kind = LayerKind::linear;
  s.in = in;
  s.out = out;
  s.init = init;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, bool same_padding, Init init) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in = in;
  s.out = out;
  s.kernel = kernel;
  s.same_padding = same_padding;
  s.init = init;
  return s;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::linear) return {in, out};
  if (kind == LayerKind::conv2d) return {out, in, kernel, kernel};
  return {};
}

std::size_t LayerSpec::parameter_count() const { return parametric() ? numel(weight_shape()) + out : 0; }

std::string to_string(const LayerSpec& spec) {
  std::ostringstream os;
  switch (spec.kind) {
    case LayerKind::linear:
      os << "linear:" << spec.in << ':' << spec.out;
      break;
    case LayerKind::conv2d:
      os << "conv2d:" << spec.in << ':' << spec.out << ':' << spec.kernel;
      if (spec.same_padding) os << ":same";
      break;
    case LayerKind::relu:
      return "relu";
    case LayerKind::avgpool_global:
      return "avgpool";
    case LayerKind::flatten:
      return "flatten";
  }
  if (spec.init == Init::zeros) os << ":zeros";
  return os.str();
}

std::string to_string(const std::vector<LayerSpec>& specs) {
  std::string out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) out += ',';
    out += to_string(specs[i]);
  }
  return out;
}

namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& p : parts) {
    const auto b = p.find_first_not_of(" \t");
    const auto e = p.find_last_not_of(" \t");
    p = b == std::string::npos ? std::string() : p.substr(b, e - b + 1);
  }
  return parts;
}

std::size_t positive(const std::string& field, std::string_view text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(field, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != field.size() || v == 0 || field.empty()) {
    throw ConfigError("layer '" + std::string(text) + "': '" + field + "' is not a positive integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

LayerSpec parse_layer(std::string_view text) {
  auto parts = split(text, ':');
  Init init = Init::kaiming_uniform;
  if (parts.size() > 1 && parts.back() == "zeros") {
    init = Init::zeros;
    parts.pop_back();
  }
  const std::string& kind = parts[0];
  if (kind == "linear" && parts.size() == 3) {
    return LayerSpec::linear(positive(parts[1], text), positive(parts[2], text), init);
  }
  if (kind == "conv2d" && (parts.size() == 4 || (parts.size() == 5 && parts[4] == "same"))) {
    return LayerSpec::conv2d(positive(parts[1], text), positive(parts[2], text), positive(parts[3], text),
                             parts.size() == 5, init);
  }
  if (parts.size() == 1 && init == Init::kaiming_uniform) {
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "avgpool") return LayerSpec::avgpool_global();
    if (kind == "flatten") return LayerSpec::flatten();
  }
  throw ConfigError("unrecognised layer '" + std::string(text) + "'");
}

std::vector<LayerSpec> parse_layers(std::string_view comma_separated) {
  std::vector<LayerSpec> out;
  for (const auto& part : split(comma_separated, ',')) {
    if (!part.empty()) out.push_back(parse_layer(part));
  }
  return out;
}

Shape infer_shape(const LayerSpec& spec, const Shape& in) {
  auto fail = [&](const std::string& expected) -> Shape {
    throw ShapeError(to_string(spec) + ": expected per-sample input " + expected + ", got " + to_string(in));
  };
  switch (spec.kind) {
    case LayerKind::linear:
      if (in.size() != 1 || in[0] != spec.in) return fail("[" + std::to_string(spec.in) + "]");
      return {spec.out};
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[0] != spec.in) return fail("[" + std::to_string(spec.in) + " x h x w]");
      const std::size_t pad = 2 * spec.padding();
      if (in[1] + pad < spec.kernel || in[2] + pad < spec.kernel) return fail("spatial extent >= kernel");
      return {spec.out, in[1] + pad - spec.kernel + 1, in[2] + pad - spec.kernel + 1};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::avgpool_global:
      if (in.size() != 3) return fail("[c x h x w]");
      return {in[0]};
    case LayerKind::flatten:
      return {numel(in)};
  }
  return in;
}

Layer make_layer(const LayerSpec& spec, const std::string& id_prefix, std::mt19937_64& rng) {
  Layer layer;
  layer.spec = spec;
  if (!spec.parametric()) return layer;
  if (spec.kind == LayerKind::conv2d && spec.same_padding && spec.kernel % 2 == 0) {
    throw ConfigError(to_string(spec) + ": same padding needs an odd kernel");
  }
  const Shape ws = spec.weight_shape();
  std::vector<double> w(numel(ws), 0.0);
  if (spec.init == Init::kaiming_uniform) {
    const std::size_t fan_in = numel(ws) / spec.out;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w) v = dist(rng);
  }
  layer.weight = Parameter(id_prefix + ".weight", Tensor(ws, std::move(w)));
  layer.bias = Parameter(id_prefix + ".bias", Tensor::zeros(spec.bias_shape()));
  return layer;
}

Tensor apply_parametric(const LayerSpec& spec, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (spec.kind == LayerKind::linear) return linear(x, weight, bias);
  if (spec.kind == LayerKind::conv2d) return add(conv2d(x, weight, spec.padding()), bias);
  throw std::logic_error("apply_parametric: " + to_string(spec) + " has no parameters");
}

Tensor apply_layer(Layer& layer, const Tensor& x, const Binder& bind) {
  switch (layer.spec.kind) {
    case LayerKind::linear:
    case LayerKind::conv2d:
      return apply_parametric(layer.spec, x, bind(layer.weight), bind(layer.bias));
    case LayerKind::relu:
      return relu(x);
    case LayerKind::avgpool_global:
      return avgpool_global(x);
    case LayerKind::flatten:
      return flatten(x);
  }
  return x;
}

}  // namespace localgrad
