#pragma once

#include <map>
#include <string>
#include <vector>

#include "automoe/tensor.hpp"

namespace automoe {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CheckpointData {
  std::vector<NamedTensor> tensors;
  std::map<std::string, std::string> metadata;
};

// Layout: 8-byte magic "AMOECKPT", u32 version, u64 manifest length, JSON
// manifest (names, shapes, dtype, byte offsets, metadata), then the raw
// little-endian tensor data in manifest order.
void save_checkpoint(const std::string& path, const CheckpointData& data);

/// Throws ParseError on a malformed container. Tensors stored at the other
/// precision are converted; same-precision loads are bit-exact.
CheckpointData load_checkpoint(const std::string& path);

}  // namespace automoe
