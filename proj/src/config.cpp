#include "localgrad/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "localgrad/error.hpp"

namespace localgrad {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, end);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size())
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::uint64_t> parse_uint_list(const std::string& key, const std::string& text) {
  std::vector<std::uint64_t> out;
  std::string body = trim(text);
  if (body.size() >= 2 && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(key + ": empty list element in '" + text + "'");
    out.push_back(parse_uint(key, item));
  }
  return out;
}

enum class Kind { string, integer, number, boolean, list };

struct Field {
  const char* key;
  Kind kind;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Member>
Field uint_field(const char* key, Member member) {
  return {key, Kind::integer,
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            std::invoke(member, c) = static_cast<std::remove_reference_t<decltype(std::invoke(member, c))>>(
                parse_uint(k, v));
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <class Member>
Field double_field(const char* key, Member member) {
  return {key, Kind::number,
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            std::invoke(member, c) = parse_double(k, v);
          },
          [member](const RunConfig& c) { return format_double(std::invoke(member, c)); }};
}

template <class Member>
Field bool_field(const char* key, Member member) {
  return {key, Kind::boolean,
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            std::invoke(member, c) = parse_bool(k, v);
          },
          [member](const RunConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <class Member>
Field string_field(const char* key, Member member) {
  return {key, Kind::string,
          [member](RunConfig& c, const std::string&, const std::string& v) { std::invoke(member, c) = v; },
          [member](const RunConfig& c) { return std::invoke(member, c); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("layers", [](auto& c) -> auto& { return c.layers; }));
    f.push_back(uint_field("depth", [](auto& c) -> auto& { return c.depth; }));
    f.push_back(uint_field("width", [](auto& c) -> auto& { return c.width; }));
    f.push_back(uint_field("k", [](auto& c) -> auto& { return c.k; }));
    f.push_back({"mode", Kind::string,
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   try {
                     c.mode = parse_mode(v);
                   } catch (const std::exception&) {
                     throw ConfigError(k + ": expected e2e, local or man, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.mode); }});
    f.push_back(bool_field("use_ema", [](auto& c) -> auto& { return c.use_ema; }));
    f.push_back(bool_field("use_bias", [](auto& c) -> auto& { return c.use_bias; }));
    f.push_back(bool_field("raw_copy", [](auto& c) -> auto& { return c.raw_copy; }));
    f.push_back(double_field("lr", [](auto& c) -> auto& { return c.sgd.lr; }));
    f.push_back(double_field("aux_lr", [](auto& c) -> auto& { return c.sgd.aux_lr; }));
    f.push_back(double_field("momentum", [](auto& c) -> auto& { return c.sgd.momentum; }));
    f.push_back(double_field("weight_decay", [](auto& c) -> auto& { return c.sgd.weight_decay; }));
    f.push_back(uint_field("epochs", [](auto& c) -> auto& { return c.sgd.epochs; }));
    f.push_back(uint_field("batch_size", [](auto& c) -> auto& { return c.sgd.batch_size; }));
    f.push_back({"schedule", Kind::string,
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "cosine")
                     c.sgd.schedule = Schedule::cosine;
                   else if (v == "constant")
                     c.sgd.schedule = Schedule::constant;
                   else
                     throw ConfigError(k + ": expected cosine or constant, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.sgd.schedule == Schedule::cosine ? "cosine" : "constant");
                 }});
    f.push_back(double_field("man_momentum", [](auto& c) -> auto& { return c.sgd.man_momentum; }));
    f.push_back(double_field("head_budget", [](auto& c) -> auto& { return c.heads.budget_ratio; }));
    f.push_back(uint_field("head_hidden", [](auto& c) -> auto& { return c.heads.hidden; }));
    f.push_back(string_field("dataset", [](auto& c) -> auto& { return c.data.kind; }));
    f.push_back(uint_field("n_per_class", [](auto& c) -> auto& { return c.data.n_per_class; }));
    f.push_back(uint_field("classes", [](auto& c) -> auto& { return c.data.classes; }));
    f.push_back(double_field("noise", [](auto& c) -> auto& { return c.data.noise; }));
    f.push_back(double_field("turns", [](auto& c) -> auto& { return c.data.turns; }));
    f.push_back(double_field("separation", [](auto& c) -> auto& { return c.data.separation; }));
    f.push_back(uint_field("dims", [](auto& c) -> auto& { return c.data.dims; }));
    f.push_back(string_field("csv_path", [](auto& c) -> auto& { return c.data.csv_path; }));
    f.push_back(string_field("idx_images", [](auto& c) -> auto& { return c.data.idx_images; }));
    f.push_back(string_field("idx_labels", [](auto& c) -> auto& { return c.data.idx_labels; }));
    f.push_back({"seeds", Kind::list,
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.seeds = parse_uint_list(k, v); },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                     if (i) out += ", ";
                     out += std::to_string(c.seeds[i]);
                   }
                   return out;
                 }});
    f.push_back(string_field("output", [](auto& c) -> auto& { return c.output; }));
    f.push_back(uint_field("probe_epochs", [](auto& c) -> auto& { return c.probe.epochs; }));
    f.push_back(double_field("probe_lr", [](auto& c) -> auto& { return c.probe.lr; }));
    f.push_back(uint_field("probe_batch", [](auto& c) -> auto& { return c.probe.batch_size; }));
    f.push_back(uint_field("cka_samples", [](auto& c) -> auto& { return c.cka_samples; }));
    f.push_back(uint_field("memory_batch", [](auto& c) -> auto& { return c.memory_batch; }));
    return f;
  }();
  return table;
}

std::string unquote(const std::string& key, const std::string& raw, std::size_t line) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 2 < raw.size()) {
        ++i;
      } else if (raw[i] == '"') {
        throw ConfigError("line " + std::to_string(line) + ": " + key + ": unescaped quote in string");
      }
      out += raw[i];
    }
    return out;
  }
  if (raw.size() >= 2 && raw.front() == '[' && raw.back() == ']') return trim(raw.substr(1, raw.size() - 2));
  if (raw.empty()) throw ConfigError("line " + std::to_string(line) + ": " + key + ": missing value");
  if (raw.front() == '"' || raw.front() == '[')
    throw ConfigError("line " + std::to_string(line) + ": " + key + ": unterminated value");
  return raw;
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  sgd.lr = 0.01;
  sgd.aux_lr = 0.002;
  sgd.epochs = 200;
}

AblationFlags RunConfig::flags() const {
  if (mode != TrainMode::man) return AblationFlags::vanilla();
  return {true, use_ema, use_bias, raw_copy};
}

void RunConfig::validate() const {
  if (k < 1) throw ConfigError("k: must be at least 1");
  if (layers.empty() && (depth < 1 || width < 1)) throw ConfigError("depth/width: must be at least 1");
  if (!layers.empty()) {
    try {
      parse_layers(layers);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("layers: ") + e.what());
    }
  }
  if (raw_copy && !use_ema) throw ConfigError("raw_copy: requires use_ema = true");
  sgd.validate();
  if (sgd.epochs < 1) throw ConfigError("epochs: must be at least 1");
  if (!(heads.budget_ratio > 0.0)) throw ConfigError("head_budget: must be positive");
  static const std::set<std::string> kinds{"spirals", "blobs", "csv", "idx"};
  if (!kinds.count(data.kind)) throw ConfigError("dataset: expected spirals, blobs, csv or idx, got '" + data.kind + "'");
  if (data.classes < 2) throw ConfigError("classes: must be at least 2");
  if (data.n_per_class < 1) throw ConfigError("n_per_class: must be at least 1");
  if (!(data.noise >= 0.0)) throw ConfigError("noise: must be non-negative");
  if (!(data.turns > 0.0)) throw ConfigError("turns: must be positive");
  if (!(data.separation > 0.0)) throw ConfigError("separation: must be positive");
  if (data.dims < 1) throw ConfigError("dims: must be at least 1");
  if (data.kind == "csv" && data.csv_path.empty()) throw ConfigError("csv_path: required for dataset = csv");
  if (data.kind == "idx" && (data.idx_images.empty() || data.idx_labels.empty()))
    throw ConfigError("idx_images/idx_labels: required for dataset = idx");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds: duplicate seed");
  if (output.empty()) throw ConfigError("output: must not be empty");
  if (probe.epochs < 1) throw ConfigError("probe_epochs: must be at least 1");
  if (!(probe.lr > 0.0)) throw ConfigError("probe_lr: must be positive");
  if (probe.batch_size < 1) throw ConfigError("probe_batch: must be at least 1");
  if (cka_samples < 2) throw ConfigError("cka_samples: must be at least 2");
  if (memory_batch < 1) throw ConfigError("memory_batch: must be at least 1");
}

ConfigValues parse_config_text(const std::string& text) {
  ConfigValues values;
  std::istringstream in(text);
  std::string raw_line;
  std::size_t line = 0;
  while (std::getline(in, raw_line)) {
    ++line;
    const std::string body = trim(strip_comment(raw_line));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) + ": expected 'key = value', got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line) + ": missing key");
    const std::string value = unquote(key, trim(std::string_view(body).substr(eq + 1)), line);
    if (!values.emplace(key, value).second)
      throw ConfigError("line " + std::to_string(line) + ": " + key + ": duplicate key");
  }
  return values;
}

ConfigValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig apply_config(RunConfig base, const ConfigValues& values) {
  for (const auto& [key, value] : values) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError(key + ": unknown key");
    it->set(base, key, value);
  }
  return base;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
  }();
  return keys;
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out = std::string("# localgrad ") + kToolVersion + " resolved config\n";
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    const std::string v = f.get(cfg);
    if (f.kind == Kind::string)
      out += "\"" + escape(v) + "\"";
    else if (f.kind == Kind::list)
      out += "[" + v + "]";
    else
      out += v;
    out += "\n";
  }
  return out;
}

ModelSpec model_spec(const RunConfig& cfg, const Shape& sample_shape) {
  ModelSpec spec;
  spec.input_shape = sample_shape;
  spec.classes = cfg.data.classes;
  if (!cfg.layers.empty()) {
    spec.layers = parse_layers(cfg.layers);
    return spec;
  }
  if (sample_shape.size() > 1) spec.layers.push_back(LayerSpec::flatten());
  const std::size_t in = numel(sample_shape);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    spec.layers.push_back(LayerSpec::linear(i == 0 ? in : cfg.width, cfg.width));
    spec.layers.push_back(LayerSpec::relu());
  }
  return spec;
}

Dataset load_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == "spirals") return gen_spirals(cfg.n_per_class, cfg.classes, cfg.noise, seed, cfg.turns);
  if (cfg.kind == "blobs") return gen_blobs(cfg.n_per_class, cfg.classes, cfg.separation, seed, cfg.dims);
  if (cfg.kind == "csv") return load_csv(cfg.csv_path, cfg.classes, seed);
  if (cfg.kind == "idx") return load_idx(cfg.idx_images, cfg.idx_labels, cfg.classes, seed);
  throw ConfigError("dataset: unknown kind '" + cfg.kind + "'");
}

}  // namespace localgrad
