#pragma once

#include <filesystem>

#include "localgrad/network.hpp"

namespace localgrad {

inline constexpr std::string_view kCheckpointMagic = "LOCALGRAD1";
inline constexpr std::string_view kActivationMagic = "LOCALACT1";

/// Full network state: spec, flags, every parameter and both adapter copies.
/// Reloading reproduces every value bitwise.
void save_checkpoint(const std::filesystem::path& path, PartitionedNetwork& net);
PartitionedNetwork load_checkpoint(const std::filesystem::path& path);

}  // namespace localgrad
