#include "m3ae/network.hpp"

#include <cstring>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

namespace nn = torch::nn;

nn::Conv3d conv3(int in, int out, int stride = 1) {
  return nn::Conv3d(nn::Conv3dOptions(in, out, 3).stride(stride).padding(1));
}

nn::Conv3d conv1(int in, int out) { return nn::Conv3d(nn::Conv3dOptions(in, out, 1)); }

torch::Tensor upsample2(const torch::Tensor& x) {
  return nn::functional::interpolate(
      x, nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2, 2, 2})
             .mode(torch::kTrilinear)
             .align_corners(false));
}

}  // namespace

std::vector<int> UNetConfig::supervision_divisors() const {
  std::vector<int> out;
  for (int l = 0; l < std::min(levels, 3); ++l) out.push_back(1 << l);
  return out;
}

void UNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("network needs at least one input channel");
  if (levels < 2) throw ConfigError("network needs at least two levels");
  if (base_channels < 1 || groups_per_norm < 1 || blocks_per_level < 0 || out_regions < 1)
    throw ConfigError("invalid network widths");
  if (base_channels % norm_groups(base_channels) != 0)
    throw ConfigError("base_channels must be divisible by min(groups_per_norm, base_channels)");
}

ResBlockImpl::ResBlockImpl(int channels, int groups) {
  norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(groups, channels)));
  conv1_ = register_module("conv1", conv3(channels, channels));
  norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(groups, channels)));
  conv2_ = register_module("conv2", conv3(channels, channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1_(torch::relu(norm1_(x)));
  h = conv2_(torch::relu(norm2_(h)));
  return x + h;
}

UNet3dImpl::UNet3dImpl(const UNetConfig& config) : config_(config) {
  config_.validate();
  const int L = config_.levels;
  stem_ = register_module("stem", conv3(config_.in_channels, config_.channels_at(0)));
  for (int l = 0; l < L; ++l) {
    const int c = config_.channels_at(l);
    if (l > 0) down_.push_back(register_module("down" + std::to_string(l), conv3(config_.channels_at(l - 1), c, 2)));
    nn::Sequential blocks;
    for (int b = 0; b < config_.blocks_per_level; ++b) blocks->push_back(ResBlock(c, config_.norm_groups(c)));
    enc_.push_back(register_module("enc" + std::to_string(l), blocks));
  }
  up_.resize(L - 1, nullptr);
  fuse_.resize(L - 1, nullptr);
  dec_.resize(L - 1, nullptr);
  for (int l = L - 2; l >= 0; --l) {
    const int c = config_.channels_at(l);
    up_[l] = register_module("up" + std::to_string(l), conv1(config_.channels_at(l + 1), c));
    fuse_[l] = register_module("fuse" + std::to_string(l), conv3(2 * c, c));
    nn::Sequential blocks;
    for (int b = 0; b < config_.blocks_per_level; ++b) blocks->push_back(ResBlock(c, config_.norm_groups(c)));
    dec_[l] = register_module("dec" + std::to_string(l), blocks);
  }
}

torch::Tensor UNet3dImpl::encode(const torch::Tensor& x, std::vector<torch::Tensor>* skips) {
  if (x.dim() != 5 || x.size(1) != config_.in_channels)
    throw ShapeError("network input must be B x " + std::to_string(config_.in_channels) + " x D x H x W");
  const std::int64_t div = std::int64_t{1} << (config_.levels - 1);
  for (int a = 2; a < 5; ++a)
    if (x.size(a) % div != 0)
      throw ShapeError("spatial size " + std::to_string(x.size(a)) + " is not divisible by " + std::to_string(div));
  auto h = stem_(x);
  for (int l = 0; l < config_.levels; ++l) {
    if (l > 0) h = down_[l - 1](h);
    h = enc_[l]->forward(h);
    if (skips) skips->push_back(h);
  }
  return h;
}

ForwardOutput UNet3dImpl::forward(const torch::Tensor& x, HeadMode mode) {
  if (mode == HeadMode::kPretrain && !has_regression_head())
    throw ConfigError("pretrain forward needs the regression head");
  if (mode == HeadMode::kFinetune && !has_segmentation_heads())
    throw ConfigError("finetune forward needs the segmentation heads");

  ForwardOutput out;
  std::vector<torch::Tensor> skips;
  out.bottleneck = encode(x, &skips);
  out.decoder_feats.resize(config_.levels);
  out.decoder_feats[config_.levels - 1] = out.bottleneck;
  auto h = out.bottleneck;
  for (int l = config_.levels - 2; l >= 0; --l) {
    h = up_[l](upsample2(h));
    h = fuse_[l](torch::cat({h, skips[l]}, 1));
    h = dec_[l]->forward(h);
    out.decoder_feats[l] = h;
  }
  if (mode == HeadMode::kPretrain) {
    out.recon = recon_head_(out.decoder_feats[0]);
  } else {
    for (auto& [div, head] : seg_heads_) {
      int level = 0;
      while ((1 << level) < div) ++level;
      auto logits = head(out.decoder_feats[level]);
      out.seg_probs[div] = torch::sigmoid(logits);
      out.seg_logits[div] = std::move(logits);
    }
  }
  return out;
}

void UNet3dImpl::attach_regression_head() {
  if (!seg_heads_.empty()) {
    for (auto& [div, head] : seg_heads_) unregister_module("seg_head" + std::to_string(div));
    seg_heads_.clear();
  }
  if (!recon_head_.is_empty()) unregister_module("recon_head");
  recon_head_ = register_module("recon_head", conv1(config_.channels_at(0), config_.in_channels));
}

void UNet3dImpl::attach_segmentation_heads() {
  if (!recon_head_.is_empty()) {
    unregister_module("recon_head");
    recon_head_ = nullptr;
  }
  for (auto& [div, head] : seg_heads_) unregister_module("seg_head" + std::to_string(div));
  seg_heads_.clear();
  for (int div : config_.supervision_divisors()) {
    int level = 0;
    while ((1 << level) < div) ++level;
    seg_heads_.emplace(div, register_module("seg_head" + std::to_string(div),
                                            conv1(config_.channels_at(level), config_.out_regions)));
  }
  // Keep the new heads on the backbone's dtype.
  to(stem_->weight.scalar_type());
}

void UNet3dImpl::zero_regression_head() {
  if (recon_head_.is_empty()) throw ConfigError("no regression head attached");
  torch::NoGradGuard guard;
  recon_head_->weight.zero_();
  recon_head_->bias.zero_();
}

std::vector<std::pair<std::string, torch::Tensor>> UNet3dImpl::backbone_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : named_parameters()) {
    const auto& key = item.key();
    if (key.rfind("recon_head", 0) == 0 || key.rfind("seg_head", 0) == 0) continue;
    out.emplace_back(key, item.value());
  }
  return out;
}

std::int64_t UNet3dImpl::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

void swap_head(UNet3d& net, std::uint64_t seed) {
  torch::manual_seed(seed);
  net->attach_segmentation_heads();
}

UNet3d make_unet(const UNetConfig& config, HeadMode heads, std::uint64_t seed) {
  torch::manual_seed(seed);
  UNet3d net(config);
  if (heads == HeadMode::kPretrain)
    net->attach_regression_head();
  else
    net->attach_segmentation_heads();
  return net;
}

std::uint64_t tensor_checksum(const std::vector<torch::Tensor>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tensors) {
    auto c = t.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    for (std::size_t i = 0; i < c.nbytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace m3ae
