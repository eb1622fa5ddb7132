#include "localgrad/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "localgrad/error.hpp"

namespace localgrad {

Tensor Dataset::batch_inputs(std::span<const std::size_t> indices) const {
  const std::size_t f = features();
  std::vector<double> out(indices.size() * f);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(indices[i] * f), f,
                out.begin() + static_cast<std::ptrdiff_t>(i * f));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

Dataset make_dataset(Shape sample_shape, std::vector<double> raw_inputs, std::vector<int> labels, std::size_t classes,
                     std::uint64_t seed) {
  Dataset d;
  d.sample_shape = std::move(sample_shape);
  d.raw_inputs = std::move(raw_inputs);
  d.labels = std::move(labels);
  d.classes = classes;
  const std::size_t f = d.features();
  if (d.labels.empty()) throw FormatError("dataset: no samples");
  if (d.raw_inputs.size() != d.labels.size() * f) {
    throw ShapeError("dataset: " + std::to_string(d.raw_inputs.size()) + " values for " +
                     std::to_string(d.labels.size()) + " samples of shape " + to_string(d.sample_shape));
  }

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const int y = d.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw FormatError("dataset: label " + std::to_string(y) + " of sample " + std::to_string(i) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  std::mt19937_64 rng(seed ^ 0x73706c6974ULL);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n_test = members.size() / 5;
    d.test.insert(d.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    d.train.insert(d.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.test.begin(), d.test.end());

  d.mean.assign(f, 0.0);
  d.stddev.assign(f, 0.0);
  for (auto i : d.train)
    for (std::size_t j = 0; j < f; ++j) d.mean[j] += d.raw_inputs[i * f + j];
  for (auto& m : d.mean) m /= static_cast<double>(d.train.size());
  for (auto i : d.train) {
    for (std::size_t j = 0; j < f; ++j) {
      const double c = d.raw_inputs[i * f + j] - d.mean[j];
      d.stddev[j] += c * c;
    }
  }
  for (auto& s : d.stddev) {
    s = std::sqrt(s / static_cast<double>(d.train.size()));
    if (!(s > 0.0)) s = 1.0;  // constant feature: centre only
  }
  d.inputs.resize(d.raw_inputs.size());
  for (std::size_t i = 0; i < d.labels.size(); ++i)
    for (std::size_t j = 0; j < f; ++j) d.inputs[i * f + j] = (d.raw_inputs[i * f + j] - d.mean[j]) / d.stddev[j];
  return d;
}

Dataset gen_spirals(std::size_t n_per_class, std::size_t classes, double noise, std::uint64_t seed, double turns) {
  if (n_per_class < 1) throw ConfigError("spirals: n_per_class must be >= 1");
  if (classes < 2) throw ConfigError("spirals: need at least 2 classes");
  if (!(noise >= 0.0)) throw ConfigError("spirals: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> position(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<double> xs;
  std::vector<int> ys;
  for (std::size_t j = 0; j < classes; ++j) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const double s = 1.0 - position(rng);  // (0, 1]
      const double radius = 2.0 * turns * s;
      const double angle =
          2.0 * std::numbers::pi * (turns * s + static_cast<double>(j) / static_cast<double>(classes));
      const double nx = jitter(rng), ny = jitter(rng);
      xs.push_back(radius * std::cos(angle) + noise * nx);
      xs.push_back(radius * std::sin(angle) + noise * ny);
      ys.push_back(static_cast<int>(j));
    }
  }
  return make_dataset({2}, std::move(xs), std::move(ys), classes, seed);
}

Dataset gen_blobs(std::size_t n_per_class, std::size_t classes, double separation, std::uint64_t seed,
                  std::size_t dims) {
  if (classes < 2) throw ConfigError("blobs: need at least 2 classes, got " + std::to_string(classes));
  if (n_per_class < 1) throw ConfigError("blobs: n_per_class must be >= 1");
  if (!(separation > 0.0)) throw ConfigError("blobs: separation must be > 0");
  if (dims < 1) throw ConfigError("blobs: dims must be >= 1");
  std::mt19937_64 rng(seed);
  double half_width = separation * static_cast<double>(classes);
  std::vector<std::vector<double>> centers;
  std::size_t attempts = 0;
  while (centers.size() < classes) {
    if (++attempts % 1000 == 0) half_width *= 1.5;
    std::uniform_real_distribution<double> coord(-half_width, half_width);
    std::vector<double> c(dims);
    for (auto& v : c) v = coord(rng);
    const bool far = std::all_of(centers.begin(), centers.end(), [&](const std::vector<double>& o) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < dims; ++i) d2 += (c[i] - o[i]) * (c[i] - o[i]);
      return std::sqrt(d2) >= separation;
    });
    if (far) centers.push_back(std::move(c));
  }
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> xs;
  std::vector<int> ys;
  for (std::size_t j = 0; j < classes; ++j) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t d = 0; d < dims; ++d) xs.push_back(centers[j][d] + unit(rng));
      ys.push_back(static_cast<int>(j));
    }
  }
  return make_dataset({dims}, std::move(xs), std::move(ys), classes, seed);
}

Dataset load_csv(const std::filesystem::path& path, std::size_t classes, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<double> xs;
  std::vector<int> ys;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() < 2) fail("expected label and at least one feature");
    if (width == 0) width = fields.size() - 1;
    if (fields.size() - 1 != width) {
      fail("expected " + std::to_string(width) + " features, got " + std::to_string(fields.size() - 1));
    }
    int label = 0;
    auto [lp, lec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
    if (lec != std::errc() || lp != fields[0].data() + fields[0].size()) fail("malformed label '" + std::string(fields[0]) + "'");
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      fail("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    ys.push_back(label);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
      if (ec != std::errc() || p != fields[i].data() + fields[i].size()) {
        fail("malformed feature " + std::to_string(i) + " '" + std::string(fields[i]) + "'");
      }
      xs.push_back(v);
    }
  }
  if (ys.empty()) throw FormatError(path.string() + ": no rows");
  return make_dataset({width}, std::move(xs), std::move(ys), classes, seed);
}

void save_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t f = data.features();
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i];
    for (std::size_t j = 0; j < f; ++j) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, data.raw_inputs[i * f + j]);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t be32(const std::string& bytes, std::size_t at, const std::filesystem::path& path) {
  if (bytes.size() < at + 4) {
    throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(at));
  }
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes,
                 std::uint64_t seed) {
  const std::string img = slurp(images);
  const std::string lab = slurp(labels);
  if (be32(img, 0, images) != 0x00000803) throw FormatError(images.string() + ": bad image magic at byte offset 0");
  if (be32(lab, 0, labels) != 0x00000801) throw FormatError(labels.string() + ": bad label magic at byte offset 0");
  const std::size_t n = be32(img, 4, images), rows = be32(img, 8, images), cols = be32(img, 12, images);
  const std::size_t n_labels = be32(lab, 4, labels);
  if (n != n_labels) {
    throw FormatError("idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }
  if (img.size() != 16 + n * rows * cols) {
    throw FormatError(images.string() + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, got " +
                      std::to_string(img.size()) + " (byte offset 16)");
  }
  if (lab.size() != 8 + n) {
    throw FormatError(labels.string() + ": expected " + std::to_string(8 + n) + " bytes, got " +
                      std::to_string(lab.size()) + " (byte offset 8)");
  }
  std::vector<double> xs(n * rows * cols);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
  std::vector<int> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    ys[i] = static_cast<unsigned char>(lab[8 + i]);
    if (static_cast<std::size_t>(ys[i]) >= classes) {
      throw FormatError(labels.string() + ": label " + std::to_string(ys[i]) + " >= " + std::to_string(classes) +
                        " at byte offset " + std::to_string(8 + i));
    }
  }
  return make_dataset({1, rows, cols}, std::move(xs), std::move(ys), classes, seed);
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t rows,
               std::size_t cols, std::span<const std::uint8_t> pixels, std::span<const std::uint8_t> label_bytes) {
  if (pixels.size() != label_bytes.size() * rows * cols) throw ShapeError("write_idx: pixel count mismatch");
  std::string img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(label_bytes.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  img.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(label_bytes.size()));
  lab.append(reinterpret_cast<const char*>(label_bytes.data()), label_bytes.size());
  std::ofstream(images, std::ios::binary | std::ios::trunc) << img;
  std::ofstream(labels, std::ios::binary | std::ios::trunc) << lab;
}

}  // namespace localgrad
