#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "localgrad/tensor.hpp"

namespace localgrad {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Binary tensor container shared by checkpoints and activation exports.
///
/// Layout, all integers little-endian:
///   magic bytes | u32 version | u64 header length | header (UTF-8 JSON)
///   u64 tensor count | per tensor: u32 name length, name,
///   u32 rank, u64 dims[rank], f64 values[prod(dims)] (IEEE-754, little-endian)
struct Container {
  std::uint32_t version = 1;
  std::string header;
  std::vector<NamedTensor> tensors;
};

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& container);

/// Throws FormatError naming the byte offset of the first malformed field.
Container read_container(const std::filesystem::path& path, std::string_view magic);

}  // namespace localgrad
