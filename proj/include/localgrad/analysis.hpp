#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "localgrad/data.hpp"
#include "localgrad/network.hpp"

namespace localgrad {

/// A representation whose centred columns are all zero.
class ZeroVarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Per-block outputs of the inference path on data[indices], each flattened
/// to [n x features]. `blocks` lists 1-based blocks; empty means all.
std::vector<Tensor> collect_activations(PartitionedNetwork& net, const Dataset& data,
                                        const std::vector<std::size_t>& indices,
                                        const std::vector<std::size_t>& blocks = {});

/// Probe input for a block output batch: conv maps globally pooled, anything
/// else flattened.
Tensor probe_features(const Tensor& block_output);

struct ProbeConfig {
  std::size_t epochs = 100;
  double lr = 0.1;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

/// Train a softmax linear classifier on frozen [n x d] features with the
/// cosine-scheduled Nesterov SGD of the trainer (no weight decay); return
/// accuracy on the held-out features. Features are standardized with
/// train-split statistics first.
double linear_probe(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                    std::span<const int> test_y, std::size_t classes, const ProbeConfig& cfg = {});

struct ProbeReport {
  std::vector<double> accuracy;  // one per block, 1..K
  ProbeConfig config;
  std::string checksum;          // parameter checksum of the probed model
};

/// Probe every block: fit on the train split, score on the test split.
/// The network is only read.
ProbeReport probe_network(PartitionedNetwork& net, const Dataset& data, const ProbeConfig& cfg = {});

/// Hex FNV-1a over every parameter value and EMA copy.
std::string parameter_checksum(const PartitionedNetwork& net);

/// Linear CKA: ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centred
/// inputs. Throws ShapeError on row-count mismatch and ZeroVarianceError for
/// a constant representation.
double linear_cka(const Tensor& x, const Tensor& y);

struct CkaMatrix {
  std::string model_a;
  std::string model_b;
  std::vector<std::vector<double>> values;  // [block of a][block of b]
};

CkaMatrix cka_report(PartitionedNetwork& a, PartitionedNetwork& b, const Dataset& data,
                     const std::vector<std::size_t>& indices, std::string name_a = "a", std::string name_b = "b");

/// Header `block_a,block_b,cka`, blocks 1-based.
std::string to_csv(const CkaMatrix& matrix);
/// Header `block,probe_accuracy,epochs,lr,checksum`.
std::string to_csv(const ProbeReport& report);

/// Write block activations on data[indices] plus labels as a LOCALACT1
/// container (tensors `block<k>` and `labels`).
void export_activations(const std::filesystem::path& path, PartitionedNetwork& net, const Dataset& data,
                        const std::vector<std::size_t>& indices);

}  // namespace localgrad
