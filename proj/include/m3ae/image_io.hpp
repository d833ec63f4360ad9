#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace m3ae {

/// 8-bit grayscale PNG from an H x W uint8 tensor.
void write_png_gray(const std::filesystem::path& path, const torch::Tensor& image);
/// 8-bit RGB PNG from an H x W x 3 uint8 tensor.
void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& image);

/// One row per modality with its axial, coronal and sagittal centre slices,
/// each modality min-max scaled to [0, 255]. Returns H x W uint8.
torch::Tensor orthogonal_montage(const torch::Tensor& volume);

}  // namespace m3ae
