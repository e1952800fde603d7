#pragma once

// Checkpoint layout (little-endian):
//   magic "QADCKPT1" (8 bytes), uint32 version, uint32 tensor count
//   per tensor: uint32 name length, name bytes, uint32 rank, uint32 dims...,
//               float32 values, row-major

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "qad/nn/model.hpp"

namespace qad::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParameterSet& params);
ParameterSet read_checkpoint(std::istream& in);

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);
/// Loads and checks names and shapes against `spec` (shape error on mismatch).
ParameterSet load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec);

std::string checkpoint_bytes(const ParameterSet& params);

}  // namespace qad::nn
