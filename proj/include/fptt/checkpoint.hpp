#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fptt/nn.hpp"
#include "fptt/tensor.hpp"

// FPCK container: named float tensors plus a text config snapshot.
//   "FPCK" | u32 version | u32 count |
//   count × (u16 name length, name, u8 rank, u32 dims…, f32 payload) |
//   u32 config length, config text
// All integers and floats little-endian.

namespace fptt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::string config;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ParameterSet<float>& params, std::string config);
// Copies checkpoint tensors into `params`; names and shapes must match exactly.
void restore_parameters(ParameterSet<float>& params, const Checkpoint& ckpt);

}  // namespace fptt
