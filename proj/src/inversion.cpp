#include "m3ae/inversion.hpp"

#include "m3ae/error.hpp"
#include "m3ae/image_io.hpp"
#include "m3ae/network.hpp"
#include "m3ae/volume_io.hpp"

namespace m3ae {

std::string to_string(FillMode mode) {
  switch (mode) {
    case FillMode::kInversion: return "inversion";
    case FillMode::kZero: return "zero";
    case FillMode::kMean: return "mean";
  }
  return "inversion";
}

FillMode fill_mode_from_string(const std::string& name) {
  if (name == "inversion") return FillMode::kInversion;
  if (name == "zero") return FillMode::kZero;
  if (name == "mean") return FillMode::kMean;
  throw ConfigError("unknown fill mode '" + name + "' (expected inversion, zero or mean)");
}

SubstituteImage SubstituteImage::gaussian(const std::array<std::int64_t, 4>& shape, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto voxels = at::normal(0.0, 1.0, {shape[0], shape[1], shape[2], shape[3]}, gen, torch::kFloat32);
  return from_tensor(voxels, true, FillMode::kInversion);
}

SubstituteImage SubstituteImage::constant(const std::vector<double>& per_modality,
                                          const std::array<std::int64_t, 3>& spatial, FillMode mode) {
  const auto n = static_cast<std::int64_t>(per_modality.size());
  auto voxels = torch::empty({n, spatial[0], spatial[1], spatial[2]}, torch::kFloat32);
  for (std::int64_t m = 0; m < n; ++m) voxels[m].fill_(per_modality[m]);
  return from_tensor(voxels, false, mode);
}

SubstituteImage SubstituteImage::from_tensor(torch::Tensor voxels, bool trainable, FillMode mode) {
  if (voxels.dim() != 4) throw ShapeError("substitute image must be N x D x H x W");
  SubstituteImage s;
  s.voxels_ = voxels.detach().clone().contiguous();
  s.trainable_ = trainable;
  s.mode_ = mode;
  if (trainable) s.voxels_.set_requires_grad(true);
  return s;
}

std::array<std::int64_t, 4> SubstituteImage::shape() const {
  return {voxels_.size(0), voxels_.size(1), voxels_.size(2), voxels_.size(3)};
}

void SubstituteImage::freeze() {
  trainable_ = false;
  optimizer_.reset();
  voxels_ = voxels_.detach();
  voxels_.set_requires_grad(false);
}

void SubstituteImage::zero_grad() {
  if (voxels_.defined() && voxels_.grad().defined()) voxels_.mutable_grad().zero_();
}

torch::optim::Adam& SubstituteImage::optimizer() {
  if (!trainable_) throw ConfigError("substitute image is frozen");
  if (!optimizer_)
    optimizer_ = std::make_shared<torch::optim::Adam>(std::vector<torch::Tensor>{voxels_},
                                                      torch::optim::AdamOptions(3e-4));
  return *optimizer_;
}

std::uint64_t SubstituteImage::checksum() const { return tensor_checksum({voxels_}); }

SubstituteImage init_substitute(const std::array<std::int64_t, 4>& shape, std::uint64_t seed) {
  return SubstituteImage::gaussian(shape, seed);
}

void inversion_step(SubstituteImage& sub, double lr) {
  auto& opt = sub.optimizer();
  const auto& grad = sub.voxels().grad();
  if (grad.defined() && !torch::isfinite(grad).all().item<bool>()) {
    const auto bad = (~torch::isfinite(grad)).sum().item<std::int64_t>();
    throw NumericError("non-finite gradient on the substitute image: " + std::to_string(bad) + " of " +
                       std::to_string(grad.numel()) + " voxels");
  }
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  if (!grad.defined()) return;
  opt.step();
}

void freeze_substitute(SubstituteImage& sub) { sub.freeze(); }

void export_substitute(const SubstituteImage& sub, const std::filesystem::path& stem) {
  const auto v = sub.voxels().detach().contiguous();
  write_volume_file(stem.string() + ".m3v", v);
  write_png_gray(stem.string() + ".png", orthogonal_montage(v));
}

}  // namespace m3ae
