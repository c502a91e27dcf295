// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faclstm/optim.hpp"

namespace facl {

// Named-tensor container, all integers little-endian:
//
//   "FACL"                      4-byte magic
//   u32  version                (kCheckpointVersion)
//   u64  tensor count
//   per tensor, in name order:
//     u32  name length, then UTF-8 name bytes
//     u32  rank, then rank x u64 extents
//     f64  data, row-major
//   u32  CRC-32 (zlib polynomial) of every byte between the magic and here
inline constexpr uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace facl
