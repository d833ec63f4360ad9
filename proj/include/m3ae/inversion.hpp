#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace m3ae {

/// How masked or missing content is filled.
enum class FillMode { kInversion, kZero, kMean };

std::string to_string(FillMode mode);
FillMode fill_mode_from_string(const std::string& name);

/// The single full-modal substitute image learned by model inversion, or a
/// constant stand-in for the zero/mean-fill ablations. Shape N x D x H x W,
/// equal to the training crop.
class SubstituteImage {
 public:
  SubstituteImage() = default;

  /// i.i.d. N(0, 1) voxels drawn from `seed`; trainable.
  static SubstituteImage gaussian(const std::array<std::int64_t, 4>& shape, std::uint64_t seed);
  /// Constant per-modality values; never trainable.
  static SubstituteImage constant(const std::vector<double>& per_modality, const std::array<std::int64_t, 3>& spatial,
                                  FillMode mode);
  static SubstituteImage from_tensor(torch::Tensor voxels, bool trainable, FillMode mode);

  const torch::Tensor& voxels() const { return voxels_; }
  bool trainable() const { return trainable_; }
  FillMode mode() const { return mode_; }
  std::array<std::int64_t, 4> shape() const;

  /// Clears the trainable flag and drops the optimizer; voxels stay bitwise constant.
  void freeze();

  /// Zeroes the accumulated gradient before the next backward pass.
  void zero_grad();

  /// Adaptive-moment optimizer owned by this image (created lazily when trainable).
  torch::optim::Adam& optimizer();
  bool has_optimizer() const { return optimizer_ != nullptr; }

  std::uint64_t checksum() const;

 private:
  torch::Tensor voxels_;
  bool trainable_ = false;
  FillMode mode_ = FillMode::kInversion;
  std::shared_ptr<torch::optim::Adam> optimizer_;
};

SubstituteImage init_substitute(const std::array<std::int64_t, 4>& shape, std::uint64_t seed);

/// One Adam update of the substitute image from the gradient accumulated by
/// the backward pass that also updates the network. A missing gradient counts
/// as zero. Throws NumericError on a non-finite gradient.
void inversion_step(SubstituteImage& sub, double lr);

void freeze_substitute(SubstituteImage& sub);

/// Writes `<stem>.m3v` (volume format) and `<stem>.png` (per-modality rows of
/// axial, coronal and sagittal centre slices).
void export_substitute(const SubstituteImage& sub, const std::filesystem::path& stem);

}  // namespace m3ae
