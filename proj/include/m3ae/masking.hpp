#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "m3ae/rng.hpp"
#include "m3ae/volume.hpp"

namespace m3ae {

using SpatialShape = std::array<std::int64_t, 3>;

/// A sampled masking plan: whole dropped modalities plus a per-modality grid
/// of masked cubic patches. Dropped modalities have every patch masked.
struct MaskSpec {
  ModalitySet dropped;
  int patch_side = 16;
  SpatialShape grid{};                  // patches along D, H, W
  std::vector<std::uint8_t> patch_grid;  // N x gd x gh x gw, 1 = masked
  double target_rate = 0.0;

  int modalities() const { return dropped.count(); }
  std::int64_t patches_per_modality() const { return grid[0] * grid[1] * grid[2]; }
  bool masked(int modality, std::int64_t pz, std::int64_t py, std::int64_t px) const {
    return patch_grid[((modality * grid[0] + pz) * grid[1] + py) * grid[2] + px] != 0;
  }
  std::int64_t masked_patches(int modality) const;

  /// Expands the patch grid to an N x D x H x W boolean tensor.
  torch::Tensor voxel_mask() const;

  /// Compact record: uint32 dropped bitmask, uint16 N, patch side, grid D/H/W,
  /// float64 target rate, then the patch grid as LSB-first packed bits.
  std::vector<std::uint8_t> serialize() const;
  static MaskSpec deserialize(const std::vector<std::uint8_t>& bytes);

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Fraction of patches each kept modality must mask so that dropping `dropped`
/// whole modalities realizes the combined `rate`: (k + (N - k) p) / N = rate.
double kept_patch_ratio(int modalities, int dropped, double rate);

/// Draws k uniformly from {0, ..., N-1}, drops k modalities, and masks
/// round(p * P) patches in every remaining modality.
MaskSpec sample_pretrain_mask(int modalities, const SpatialShape& shape, int patch_side, double rate, Rng& rng);

/// Same as sample_pretrain_mask with the number of dropped modalities fixed.
MaskSpec pretrain_mask_with_drop_count(int modalities, int dropped, const SpatialShape& shape, int patch_side,
                                       double rate, Rng& rng);

/// Modality dropout alone: k uniform in {0, ..., N-1}, no patch masking.
MaskSpec sample_dropout_mask(int modalities, const SpatialShape& shape, int patch_side, Rng& rng);

/// Returns the KEPT subset; its size is uniform over {1, ..., N}.
ModalitySet sample_modality_subset(int modalities, Rng& rng);

std::pair<ModalitySet, ModalitySet> sample_two_distinct_situations(int modalities, Rng& rng);
/// Rejection loop over an arbitrary subset source; redraws B until B != A.
std::pair<ModalitySet, ModalitySet> sample_two_distinct_situations(const std::function<ModalitySet()>& draw);

MaskSpec subset_to_mask(const ModalitySet& kept, const SpatialShape& shape, int patch_side);

/// Voxels masked by `mask` come from `substitute`, all others from `x`.
MultimodalVolume apply_substitution(const MultimodalVolume& x, const torch::Tensor& substitute, const MaskSpec& mask);

/// Tensor form used inside training; differentiable w.r.t. both inputs.
/// `mask` broadcasts against `x` (N x D x H x W or B x N x D x H x W).
torch::Tensor substitute_masked(const torch::Tensor& x, const torch::Tensor& substitute, const torch::Tensor& mask);

double masked_fraction(const MaskSpec& mask);

}  // namespace m3ae
