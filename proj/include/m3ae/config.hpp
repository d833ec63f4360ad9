#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "m3ae/inversion.hpp"
#include "m3ae/losses.hpp"
#include "m3ae/network.hpp"

namespace m3ae {

/// Everything a training or evaluation run needs besides the data.
///
/// Text form is one `key = value` per line; `#` starts a comment. Unknown
/// keys are rejected so that typos do not silently fall back to defaults.
struct TrainConfig {
  UNetConfig net;
  LossWeights weights;
  double lr0 = 3e-4;
  int pretrain_epochs = 600;
  int finetune_epochs = 300;
  int batch = 2;  // subjects per pretraining step
  int crop_side = 128;
  double mask_rate = 0.875;
  int patch_side = 16;
  std::uint64_t seed = 0;
  FillMode fill = FillMode::kInversion;
  bool patch_masking = true;
  bool distill = true;
  int checkpoint_every = 10;  // epochs
  int loader_workers = 1;
  int queue_depth = 4;
  double threshold = 0.5;
  std::vector<std::string> modality_names{"flair", "t1", "t1c", "t2"};

  /// Values used for BraTS at 128^3 crops.
  static TrainConfig full_scale();
  /// Small network and crops for phantom runs on a CPU.
  static TrainConfig desk_scale();

  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  /// Applies `key = value` lines on top of `base`.
  static TrainConfig parse(const std::string& text, const TrainConfig& base);
  static TrainConfig load(const std::filesystem::path& path, const TrainConfig& base);
  std::string dump() const;
};

}  // namespace m3ae
