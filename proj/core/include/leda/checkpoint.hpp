#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "leda/util.hpp"

namespace leda {

/// Named-tensor archive: `<stem>.ckpt` text manifest plus `<stem>.ckpt.bin`
/// little-endian payload. The manifest carries a step counter and a config
/// echo alongside per-tensor (name, dtype, offset, shape) records.
struct Checkpoint {
  std::int64_t step = 0;
  KvMap config_echo;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& manifest_path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

/// Ordered (name, tensor) snapshot of a module's parameters and buffers.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& m);

/// Copies archive tensors into a module's parameters/buffers by name.
/// Throws PrerequisiteError when a name is missing or a shape differs.
void load_named_state(torch::nn::Module& m, const Checkpoint& ckpt,
                      const std::string& prefix);

/// Order-insensitive content hash of parameters and buffers.
std::uint64_t state_hash(const torch::nn::Module& m);
std::uint64_t tensor_hash(const torch::Tensor& t);

}  // namespace leda
