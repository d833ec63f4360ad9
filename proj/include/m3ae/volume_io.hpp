#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>

namespace m3ae {

/// Phantom volume files: 8-byte magic "M3AEVOL1", then uint32 N, D, H, W
/// little-endian, then the voxels channel-major and little-endian. Images
/// store float32 voxels, label files uint8 with N = 1.
inline constexpr char kVolumeMagic[8] = {'M', '3', 'A', 'E', 'V', 'O', 'L', '1'};
inline constexpr std::size_t kVolumeHeaderBytes = 24;

void write_volume_file(const std::filesystem::path& path, const torch::Tensor& volume);

/// Returns N x D x H x W float32 or uint8 depending on `dtype`; labels come
/// back as 1 x D x H x W.
torch::Tensor read_volume_file(const std::filesystem::path& path, torch::ScalarType dtype);

struct NiftiImage {
  torch::Tensor data;                      // D x H x W float32 (slowest axis first)
  std::array<double, 3> spacing{1, 1, 1};  // mm along D, H, W
};

/// Reads a single-volume NIfTI-1 file, gzip-compressed or not.
NiftiImage read_nifti(const std::filesystem::path& path);

/// Writes a float32 NIfTI-1 file (gzip-compressed when the name ends in .gz).
void write_nifti(const std::filesystem::path& path, const torch::Tensor& data,
                 const std::array<double, 3>& spacing);

}  // namespace m3ae
