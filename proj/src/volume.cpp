#include "m3ae/volume.hpp"

#include <bit>

#include "m3ae/error.hpp"

namespace m3ae {

ModalitySet::ModalitySet(std::uint32_t bits, int count) : bits_(bits), count_(count) {
  if (count < 0 || count > 32) throw ConfigError("modality count must be in [0, 32]");
  if (count < 32 && (bits >> count) != 0) throw ConfigError("modality set has members out of range");
}

ModalitySet ModalitySet::all(int count) {
  return ModalitySet(count == 32 ? 0xffffffffu : ((1u << count) - 1u), count);
}

ModalitySet ModalitySet::of(std::initializer_list<int> members, int count) {
  std::uint32_t bits = 0;
  for (int m : members) {
    if (m < 0 || m >= count) throw ConfigError("modality index out of range");
    bits |= 1u << m;
  }
  return ModalitySet(bits, count);
}

int ModalitySet::size() const { return std::popcount(bits_); }

ModalitySet ModalitySet::complement() const {
  return ModalitySet(all(count_).bits() & ~bits_, count_);
}

std::vector<int> ModalitySet::members() const {
  std::vector<int> out;
  for (int m = 0; m < count_; ++m)
    if (contains(m)) out.push_back(m);
  return out;
}

std::string ModalitySet::label(const std::vector<std::string>& names) const {
  std::string out;
  for (int m : members()) {
    if (!out.empty()) out += '+';
    out += m < static_cast<int>(names.size()) ? names[m] : "m" + std::to_string(m);
  }
  return out.empty() ? "none" : out;
}

ModalitySet MultimodalVolume::available_set() const {
  std::uint32_t bits = 0;
  for (std::size_t m = 0; m < available.size(); ++m)
    if (available[m]) bits |= 1u << m;
  return ModalitySet(bits, static_cast<int>(available.size()));
}

void MultimodalVolume::validate() const {
  if (!voxels.defined() || voxels.dim() != 4)
    throw ShapeError("multimodal volume must be a 4-D tensor (N x D x H x W)");
  if (voxels.scalar_type() != torch::kFloat32) throw ShapeError("multimodal volume must be float32");
  if (voxels.size(0) < 2) throw ShapeError("multimodal volume needs at least two modalities");
  if (static_cast<std::int64_t>(available.size()) != voxels.size(0))
    throw ShapeError("availability flags do not match modality count");
  for (double s : spacing)
    if (!(s > 0.0)) throw ShapeError("voxel spacing must be positive");
}

}  // namespace m3ae
