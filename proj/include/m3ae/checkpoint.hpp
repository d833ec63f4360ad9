#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace m3ae {

/// Versioned container: magic "M3AECKPT", uint32 version, uint64 metadata
/// length, metadata as JSON, uint32 tensor count, then per tensor: uint32 name
/// length, name, uint32 rank, int64 dims, float32 little-endian data.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  void put(const std::string& name, const torch::Tensor& t);
  bool has(const std::string& name) const;
  /// Throws IngestError for an unknown name.
  const torch::Tensor& get(const std::string& name) const;
};

/// Writes through a temporary file and renames, so a crash never leaves a torn checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stores every parameter of `module` under "<prefix><name>".
void put_module(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix);
/// Copies stored values into the module's parameters; every parameter must be present with a matching shape.
void load_module(const Checkpoint& ckpt, torch::nn::Module& module, const std::string& prefix);

/// Adam moments under "<prefix><param name>/exp_avg" and "/exp_avg_sq", step counts in meta[prefix].
void put_adam(Checkpoint& ckpt, torch::optim::Adam& opt,
              const std::vector<std::pair<std::string, torch::Tensor>>& named_params, const std::string& prefix);
void load_adam(const Checkpoint& ckpt, torch::optim::Adam& opt,
               const std::vector<std::pair<std::string, torch::Tensor>>& named_params, const std::string& prefix);

}  // namespace m3ae
