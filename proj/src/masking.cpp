#include "m3ae/masking.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

SpatialShape patch_grid_shape(const SpatialShape& shape, int patch_side) {
  if (patch_side <= 0) throw SamplingError("patch side must be positive");
  SpatialShape grid{};
  for (int a = 0; a < 3; ++a) {
    if (shape[a] <= 0 || shape[a] % patch_side != 0)
      throw SamplingError("volume dimension " + std::to_string(shape[a]) + " is not divisible by patch side " +
                          std::to_string(patch_side));
    grid[a] = shape[a] / patch_side;
  }
  return grid;
}

MaskSpec empty_mask(int modalities, const SpatialShape& shape, int patch_side) {
  MaskSpec m;
  m.dropped = ModalitySet::none(modalities);
  m.patch_side = patch_side;
  m.grid = patch_grid_shape(shape, patch_side);
  m.patch_grid.assign(static_cast<std::size_t>(modalities * m.patches_per_modality()), 0);
  return m;
}

// First `count` entries of a partial Fisher-Yates shuffle of [0, n).
std::vector<std::int64_t> choose(std::int64_t n, std::int64_t count, Rng& rng) {
  std::vector<std::int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::int64_t i = 0; i < count; ++i) std::swap(idx[i], idx[rng.uniform_int(i, n - 1)]);
  idx.resize(count);
  return idx;
}

void drop_whole(MaskSpec& m, const ModalitySet& dropped) {
  m.dropped = dropped;
  const auto per = m.patches_per_modality();
  for (int mod : dropped.members())
    std::fill_n(m.patch_grid.begin() + mod * per, per, std::uint8_t{1});
}

ModalitySet random_drop(int modalities, int k, Rng& rng) {
  std::uint32_t bits = 0;
  for (auto i : choose(modalities, k, rng)) bits |= 1u << i;
  return ModalitySet(bits, modalities);
}

}  // namespace

std::int64_t MaskSpec::masked_patches(int modality) const {
  const auto per = patches_per_modality();
  return std::count(patch_grid.begin() + modality * per, patch_grid.begin() + (modality + 1) * per, 1);
}

torch::Tensor MaskSpec::voxel_mask() const {
  const auto n = modalities();
  auto grid_t = torch::from_blob(const_cast<std::uint8_t*>(patch_grid.data()), {n, grid[0], grid[1], grid[2]},
                                 torch::kUInt8)
                    .to(torch::kBool);
  return grid_t.repeat_interleave(patch_side, 1)
      .repeat_interleave(patch_side, 2)
      .repeat_interleave(patch_side, 3)
      .contiguous();
}

std::vector<std::uint8_t> MaskSpec::serialize() const {
  std::vector<std::uint8_t> out(4 + 2 * 5 + 8);
  const std::uint32_t bits = dropped.bits();
  const std::uint16_t hdr[5] = {static_cast<std::uint16_t>(modalities()), static_cast<std::uint16_t>(patch_side),
                                static_cast<std::uint16_t>(grid[0]), static_cast<std::uint16_t>(grid[1]),
                                static_cast<std::uint16_t>(grid[2])};
  std::memcpy(out.data(), &bits, 4);
  std::memcpy(out.data() + 4, hdr, sizeof(hdr));
  std::memcpy(out.data() + 14, &target_rate, 8);
  const std::size_t head = out.size();
  out.resize(head + (patch_grid.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < patch_grid.size(); ++i)
    if (patch_grid[i]) out[head + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

MaskSpec MaskSpec::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 22) throw IngestError("truncated mask record");
  std::uint32_t bits;
  std::uint16_t hdr[5];
  MaskSpec m;
  std::memcpy(&bits, bytes.data(), 4);
  std::memcpy(hdr, bytes.data() + 4, sizeof(hdr));
  std::memcpy(&m.target_rate, bytes.data() + 14, 8);
  m.dropped = ModalitySet(bits, hdr[0]);
  m.patch_side = hdr[1];
  m.grid = {hdr[2], hdr[3], hdr[4]};
  const std::size_t cells = static_cast<std::size_t>(hdr[0]) * hdr[2] * hdr[3] * hdr[4];
  if (bytes.size() != 22 + (cells + 7) / 8) throw IngestError("mask record size mismatch");
  m.patch_grid.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) m.patch_grid[i] = (bytes[22 + i / 8] >> (i % 8)) & 1u;
  return m;
}

double kept_patch_ratio(int modalities, int dropped, double rate) {
  if (dropped < 0 || dropped >= modalities) throw SamplingError("dropped modality count must be in [0, N-1]");
  const double p = (rate * modalities - dropped) / (modalities - dropped);
  if (p < 0.0 || p > 1.0)
    throw SamplingError("masking rate " + std::to_string(rate) + " is unreachable with " + std::to_string(dropped) +
                        " of " + std::to_string(modalities) + " modalities dropped");
  return p;
}

MaskSpec pretrain_mask_with_drop_count(int modalities, int dropped, const SpatialShape& shape, int patch_side,
                                       double rate, Rng& rng) {
  if (modalities < 2) throw SamplingError("pretraining masks need at least two modalities");
  if (!(rate > 0.0 && rate < 1.0)) throw SamplingError("masking rate must lie in (0, 1)");
  const double p = kept_patch_ratio(modalities, dropped, rate);
  MaskSpec m = empty_mask(modalities, shape, patch_side);
  m.target_rate = rate;
  drop_whole(m, random_drop(modalities, dropped, rng));
  const auto per = m.patches_per_modality();
  const auto count = static_cast<std::int64_t>(std::llround(p * static_cast<double>(per)));
  for (int mod : m.dropped.complement().members())
    for (auto i : choose(per, count, rng)) m.patch_grid[mod * per + i] = 1;
  return m;
}

MaskSpec sample_pretrain_mask(int modalities, const SpatialShape& shape, int patch_side, double rate, Rng& rng) {
  if (modalities < 2) throw SamplingError("pretraining masks need at least two modalities");
  const int k = static_cast<int>(rng.uniform_int(0, modalities - 1));
  return pretrain_mask_with_drop_count(modalities, k, shape, patch_side, rate, rng);
}

MaskSpec sample_dropout_mask(int modalities, const SpatialShape& shape, int patch_side, Rng& rng) {
  if (modalities < 2) throw SamplingError("dropout masks need at least two modalities");
  const int k = static_cast<int>(rng.uniform_int(0, modalities - 1));
  MaskSpec m = empty_mask(modalities, shape, patch_side);
  drop_whole(m, random_drop(modalities, k, rng));
  m.target_rate = static_cast<double>(k) / modalities;
  return m;
}

ModalitySet sample_modality_subset(int modalities, Rng& rng) {
  if (modalities < 2) throw SamplingError("subset sampling needs at least two modalities");
  const int k = static_cast<int>(rng.uniform_int(0, modalities - 1));
  return random_drop(modalities, k, rng).complement();
}

std::pair<ModalitySet, ModalitySet> sample_two_distinct_situations(const std::function<ModalitySet()>& draw) {
  const ModalitySet a = draw();
  ModalitySet b = draw();
  while (b == a) b = draw();
  return {a, b};
}

std::pair<ModalitySet, ModalitySet> sample_two_distinct_situations(int modalities, Rng& rng) {
  return sample_two_distinct_situations([&] { return sample_modality_subset(modalities, rng); });
}

MaskSpec subset_to_mask(const ModalitySet& kept, const SpatialShape& shape, int patch_side) {
  if (kept.empty()) throw SamplingError("kept modality subset must not be empty");
  MaskSpec m = empty_mask(kept.count(), shape, patch_side);
  drop_whole(m, kept.complement());
  m.target_rate = static_cast<double>(m.dropped.size()) / kept.count();
  return m;
}

torch::Tensor substitute_masked(const torch::Tensor& x, const torch::Tensor& substitute, const torch::Tensor& mask) {
  return torch::where(mask, substitute, x);
}

MultimodalVolume apply_substitution(const MultimodalVolume& x, const torch::Tensor& substitute, const MaskSpec& mask) {
  if (!substitute.defined() || substitute.sizes() != x.voxels.sizes())
    throw ShapeError("substitute image shape does not match the input volume");
  const auto vm = mask.voxel_mask();
  if (vm.sizes() != x.voxels.sizes()) throw ShapeError("mask shape does not match the input volume");
  MultimodalVolume out = x;
  out.voxels = substitute_masked(x.voxels, substitute.to(x.voxels.scalar_type()), vm).contiguous();
  return out;
}

double masked_fraction(const MaskSpec& mask) {
  if (mask.patch_grid.empty()) return 0.0;
  const auto masked = std::count(mask.patch_grid.begin(), mask.patch_grid.end(), 1);
  return static_cast<double>(masked) / static_cast<double>(mask.patch_grid.size());
}

}  // namespace m3ae
