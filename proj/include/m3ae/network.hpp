#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace m3ae {

struct UNetConfig {
  int in_channels = 4;
  int base_channels = 16;
  int levels = 4;
  int groups_per_norm = 8;
  int out_regions = 3;
  int blocks_per_level = 2;

  int channels_at(int level) const { return base_channels << level; }
  int norm_groups(int channels) const { return std::min(groups_per_norm, channels); }
  /// Deep-supervision scales available for this depth: {1, 2, 4} capped by levels.
  std::vector<int> supervision_divisors() const;
  void validate() const;
};

enum class HeadMode { kPretrain, kFinetune };

/// Outputs of one forward pass over a B x N x D x H x W batch.
struct ForwardOutput {
  torch::Tensor bottleneck;                  // deepest encoder output, B x C x D' x H' x W'
  std::vector<torch::Tensor> decoder_feats;  // index l holds scale 1/2^l
  torch::Tensor recon;                       // pretrain only, B x N x D x H x W
  std::map<int, torch::Tensor> seg_logits;   // finetune only, keyed by scale divisor
  std::map<int, torch::Tensor> seg_probs;    // sigmoid(seg_logits), pre-upsampling
};

/// GN -> ReLU -> conv -> GN -> ReLU -> conv with an identity shortcut.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int channels, int groups);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Residual 3D U-Net with one encoder, one decoder, and swappable heads: a
/// linear 1x1x1 regression head for reconstruction, or sigmoid 1x1x1
/// segmentation heads at scales 1, 1/2 and 1/4 for deep supervision.
class UNet3dImpl : public torch::nn::Module {
 public:
  explicit UNet3dImpl(const UNetConfig& config);

  ForwardOutput forward(const torch::Tensor& x, HeadMode mode);
  /// Encoder only; returns the bottleneck and fills `skips` with every level's output.
  torch::Tensor encode(const torch::Tensor& x, std::vector<torch::Tensor>* skips = nullptr);

  const UNetConfig& config() const { return config_; }
  bool has_regression_head() const { return !recon_head_.is_empty(); }
  bool has_segmentation_heads() const { return !seg_heads_.empty(); }

  void attach_regression_head();
  /// Drops the regression head and attaches freshly initialized segmentation heads.
  void attach_segmentation_heads();
  void zero_regression_head();

  /// Parameters that survive a head swap, by registered name.
  std::vector<std::pair<std::string, torch::Tensor>> backbone_parameters() const;
  std::int64_t parameter_count() const;

 private:
  UNetConfig config_;
  torch::nn::Conv3d stem_{nullptr};
  std::vector<torch::nn::Conv3d> down_;       // down_[l - 1] enters level l
  std::vector<torch::nn::Sequential> enc_;    // residual blocks per level
  std::vector<torch::nn::Conv3d> up_;         // 1x1x1 after trilinear upsampling, per level
  std::vector<torch::nn::Conv3d> fuse_;       // merges upsampled + skip, per level
  std::vector<torch::nn::Sequential> dec_;    // residual blocks per decoder level
  torch::nn::Conv3d recon_head_{nullptr};
  std::map<int, torch::nn::Conv3d> seg_heads_;
};
TORCH_MODULE(UNet3d);

/// Replaces the regression head with new segmentation heads, initialized
/// from `seed`; backbone parameters are left untouched.
void swap_head(UNet3d& net, std::uint64_t seed);

/// Deterministic parameter initialization for a fresh network.
UNet3d make_unet(const UNetConfig& config, HeadMode heads, std::uint64_t seed);

/// Order-sensitive checksum (FNV-1a over raw bytes) of the given tensors.
std::uint64_t tensor_checksum(const std::vector<torch::Tensor>& tensors);

}  // namespace m3ae
