#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace m3ae {

/// Canonical channel order for BraTS-style input.
inline constexpr std::array<std::string_view, 4> kBratsModalities = {"flair", "t1", "t1c", "t2"};

/// Subset of modality indices, stored as a bitmask over `count` modalities.
class ModalitySet {
 public:
  ModalitySet() = default;
  ModalitySet(std::uint32_t bits, int count);

  static ModalitySet all(int count);
  static ModalitySet none(int count) { return ModalitySet(0u, count); }
  static ModalitySet of(std::initializer_list<int> members, int count);

  bool contains(int m) const { return (bits_ >> m) & 1u; }
  int size() const;
  bool empty() const { return bits_ == 0; }
  int count() const { return count_; }
  std::uint32_t bits() const { return bits_; }
  ModalitySet complement() const;
  std::vector<int> members() const;

  /// Lower-case names joined by '+', e.g. "flair+t1c".
  std::string label(const std::vector<std::string>& names) const;

  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;

 private:
  std::uint32_t bits_ = 0;
  int count_ = 0;
};

/// N x D x H x W float32 image plus voxel spacing and per-modality availability.
struct MultimodalVolume {
  torch::Tensor voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel along D, H, W
  std::vector<bool> available;

  std::int64_t modalities() const { return voxels.size(0); }
  std::array<std::int64_t, 3> spatial() const {
    return {voxels.size(1), voxels.size(2), voxels.size(3)};
  }
  ModalitySet available_set() const;

  /// Throws ShapeError when the tensor layout or flags are inconsistent.
  void validate() const;
};

/// D x H x W uint8 label map with values in {0, 1, 2, 4}.
struct LabelVolume {
  torch::Tensor labels;

  std::array<std::int64_t, 3> spatial() const {
    return {labels.size(0), labels.size(1), labels.size(2)};
  }
};

/// 3 x D x H x W boolean channels ordered (whole tumor, tumor core, enhancing tumor).
struct RegionChannels {
  torch::Tensor regions;
};

inline constexpr std::array<std::string_view, 3> kRegionNames = {"wt", "tc", "et"};

struct Subject {
  std::string id;
  MultimodalVolume image;
  LabelVolume label;
};

}  // namespace m3ae
