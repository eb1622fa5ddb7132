#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "localgrad/tensor.hpp"

namespace localgrad {

/// Labelled samples with a stratified train/test split.
///
/// `inputs` holds the standardized values (per-feature mean/stddev of the
/// train split); `raw_inputs` keeps the values as generated or read.
struct Dataset {
  Shape sample_shape;
  std::vector<double> raw_inputs;
  std::vector<double> inputs;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return numel(sample_shape); }

  /// [indices.size() x sample_shape...] tensor of standardized inputs.
  Tensor batch_inputs(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

/// Split stratified 80/20 by a seeded shuffle, then standardize.
Dataset make_dataset(Shape sample_shape, std::vector<double> raw_inputs, std::vector<int> labels, std::size_t classes,
                     std::uint64_t seed);

/// Interleaved Archimedean spirals in 2-D. Class j at curve position
/// s ~ U(0, 1] sits at radius 2 * turns * s and angle 2 * pi * (turns * s + j / classes),
/// plus isotropic Gaussian noise of stddev `noise`. Adjacent arms are 2 / classes apart.
Dataset gen_spirals(std::size_t n_per_class, std::size_t classes, double noise, std::uint64_t seed,
                    double turns = 2.0);

/// Unit-variance isotropic Gaussian clusters around seeded centers that are
/// pairwise at least `separation` apart.
Dataset gen_blobs(std::size_t n_per_class, std::size_t classes, double separation, std::uint64_t seed,
                  std::size_t dims = 2);

/// Rows `label,feature1,...,featureD`; no header.
Dataset load_csv(const std::filesystem::path& path, std::size_t classes, std::uint64_t seed = 0);
/// Writes raw (unstandardized) inputs with round-trip precision.
void save_csv(const std::filesystem::path& path, const Dataset& data);

/// IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian header,
/// unsigned bytes). Pixels are scaled to [0, 1] before standardization;
/// samples are shaped [1 x rows x cols].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes = 10,
                 std::uint64_t seed = 0);
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t rows,
               std::size_t cols, std::span<const std::uint8_t> pixels, std::span<const std::uint8_t> label_bytes);

}  // namespace localgrad
