#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <set>

#include "m3ae/error.hpp"
#include "m3ae/masking.hpp"
#include "support.hpp"

using namespace m3ae;

namespace {

const SpatialShape kFull{128, 128, 128};

MultimodalVolume random_volume(int n, std::int64_t side) {
  MultimodalVolume v;
  v.voxels = torch::rand({n, side, side, side});
  v.available.assign(n, true);
  return v;
}

torch::Tensor brute_force_substitution(const torch::Tensor& x, const torch::Tensor& sub, const MaskSpec& m) {
  auto out = x.clone();
  auto o = out.accessor<float, 4>();
  auto s = sub.accessor<float, 4>();
  for (int c = 0; c < x.size(0); ++c)
    for (int d = 0; d < x.size(1); ++d)
      for (int h = 0; h < x.size(2); ++h)
        for (int w = 0; w < x.size(3); ++w)
          if (m.masked(c, d / m.patch_side, h / m.patch_side, w / m.patch_side)) o[c][d][h][w] = s[c][d][h][w];
  return out;
}

}  // namespace

TEST_CASE("kept-modality patch ratio solves the combined rate") {
  CHECK(kept_patch_ratio(4, 0, 0.875) == doctest::Approx(0.875));
  CHECK(kept_patch_ratio(4, 1, 0.875) == doctest::Approx(2.5 / 3.0));
  CHECK(kept_patch_ratio(4, 3, 0.875) == doctest::Approx(0.5));
  CHECK_THROWS_AS(kept_patch_ratio(4, 3, 0.2), SamplingError);
  CHECK_THROWS_AS(kept_patch_ratio(4, 4, 0.875), SamplingError);
}

TEST_CASE("masked patch counts per kept modality at full scale") {
  Rng rng(1);
  const std::map<int, std::int64_t> expected = {{0, 448}, {1, 427}, {3, 256}};
  for (const auto& [k, count] : expected) {
    const auto m = pretrain_mask_with_drop_count(4, k, kFull, 16, 0.875, rng);
    CHECK(m.patches_per_modality() == 512);
    CHECK(m.dropped.size() == k);
    for (int mod = 0; mod < 4; ++mod)
      CHECK(m.masked_patches(mod) == (m.dropped.contains(mod) ? 512 : count));
  }
  const auto m0 = pretrain_mask_with_drop_count(4, 0, kFull, 16, 0.875, rng);
  CHECK(masked_fraction(m0) == 0.875);
}

TEST_CASE("sampled pretrain masks realize the combined rate") {
  Rng rng(2);
  std::set<int> ks;
  for (int i = 0; i < 1000; ++i) {
    const auto m = sample_pretrain_mask(4, kFull, 16, 0.875, rng);
    CHECK(std::abs(masked_fraction(m) - 0.875) <= 1.0 / 512.0);
    CHECK(m.dropped.size() <= 3);
    ks.insert(m.dropped.size());
    for (int mod = 0; mod < 4; ++mod)
      if (m.dropped.contains(mod)) CHECK(m.masked_patches(mod) == 512);
  }
  CHECK(ks.size() == 4);
}

TEST_CASE("mask sampling preconditions") {
  Rng rng(3);
  CHECK_THROWS_AS(sample_pretrain_mask(4, {30, 32, 32}, 16, 0.875, rng), Error);
  CHECK_THROWS_AS(sample_pretrain_mask(1, kFull, 16, 0.875, rng), Error);
  CHECK_THROWS_AS(sample_pretrain_mask(4, kFull, 16, 1.0, rng), Error);
}

TEST_CASE("dropout-only masks drop whole modalities and nothing else") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto m = sample_dropout_mask(4, {32, 32, 32}, 16, rng);
    for (int mod = 0; mod < 4; ++mod)
      CHECK(m.masked_patches(mod) == (m.dropped.contains(mod) ? m.patches_per_modality() : 0));
    CHECK(m.dropped.size() <= 3);
  }
}

TEST_CASE("kept-subset sizes are uniform over 1..N") {
  Rng rng(5);
  std::array<int, 5> counts{};
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    const auto kept = sample_modality_subset(4, rng);
    REQUIRE_FALSE(kept.empty());
    ++counts[kept.size()];
  }
  double chi2 = 0.0;
  for (int s = 1; s <= 4; ++s) chi2 += std::pow(counts[s] - kDraws / 4.0, 2) / (kDraws / 4.0);
  CHECK(testing::chi_square_upper(chi2, 3) > 0.01);
}

TEST_CASE("a zero drop count keeps every modality") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng probe(seed);
    if (probe.uniform_int(0, 3) != 0) continue;
    Rng rng(seed);
    CHECK(sample_modality_subset(4, rng) == ModalitySet::all(4));
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("two distinct missing-modal situations") {
  Rng rng(6);
  std::set<std::uint32_t> seen_a, seen_b;
  for (int i = 0; i < 100000; ++i) {
    const auto [a, b] = sample_two_distinct_situations(4, rng);
    REQUIRE_FALSE(a == b);
    REQUIRE_FALSE(a.empty());
    REQUIRE_FALSE(b.empty());
    seen_a.insert(a.bits());
    seen_b.insert(b.bits());
  }
  CHECK(seen_a.size() == 15);
  CHECK(seen_b.size() == 15);
  CHECK(seen_a.count(15u) == 1);

  const ModalitySet t1 = ModalitySet::of({1}, 4);
  std::vector<ModalitySet> script = {t1, t1, t1, ModalitySet::of({0, 2}, 4)};
  std::size_t next = 0;
  const auto [a, b] = sample_two_distinct_situations([&] { return script[next++]; });
  CHECK(a == t1);
  CHECK(b == ModalitySet::of({0, 2}, 4));
  CHECK(next == 4);
}

TEST_CASE("subset to mask") {
  const auto all = subset_to_mask(ModalitySet::all(4), {32, 32, 32}, 16);
  CHECK(masked_fraction(all) == 0.0);
  const auto flair = subset_to_mask(ModalitySet::of({0}, 4), {32, 32, 32}, 16);
  CHECK(masked_fraction(flair) == 0.75);
  CHECK(flair.masked_patches(0) == 0);
  for (int m = 1; m < 4; ++m) CHECK(flair.masked_patches(m) == flair.patches_per_modality());
  CHECK_THROWS_AS(subset_to_mask(ModalitySet::none(4), {32, 32, 32}, 16), Error);
}

TEST_CASE("substitution") {
  torch::manual_seed(7);
  const auto x = random_volume(4, 8);
  const auto sub = torch::rand({4, 8, 8, 8});

  SUBCASE("empty and full masks") {
    const auto none = subset_to_mask(ModalitySet::all(4), {8, 8, 8}, 4);
    CHECK(torch::equal(apply_substitution(x, sub, none).voxels, x.voxels));
    auto full = none;
    std::fill(full.patch_grid.begin(), full.patch_grid.end(), 1);
    CHECK(masked_fraction(full) == 1.0);
    CHECK(torch::equal(apply_substitution(x, sub, full).voxels, sub));
  }
  SUBCASE("random toy cases match a per-voxel loop") {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
      const auto xi = random_volume(4, 8);
      const auto si = torch::rand({4, 8, 8, 8});
      const int ps = (i % 2) ? 2 : 4;
      const auto m = sample_pretrain_mask(4, {8, 8, 8}, ps, 0.875, rng);
      const auto out = apply_substitution(xi, si, m);
      REQUIRE(torch::equal(out.voxels, brute_force_substitution(xi.voxels, si, m)));
      // Idempotent, and unmasked voxels keep their exact bits.
      REQUIRE(torch::equal(apply_substitution(out, si, m).voxels, out.voxels));
      const auto keep = ~m.voxel_mask();
      REQUIRE(torch::equal(out.voxels.masked_select(keep), xi.voxels.masked_select(keep)));
    }
  }
  SUBCASE("input is not modified and shapes are checked") {
    const auto before = x.voxels.clone();
    Rng rng(9);
    const auto m = sample_pretrain_mask(4, {8, 8, 8}, 4, 0.875, rng);
    (void)apply_substitution(x, sub, m);
    CHECK(torch::equal(x.voxels, before));
    CHECK_THROWS_AS(apply_substitution(x, torch::rand({4, 8, 8, 4}), m), ShapeError);
    CHECK_THROWS_AS(apply_substitution(random_volume(4, 16), sub, m), ShapeError);
  }
}

TEST_CASE("voxel mask expands the patch grid") {
  Rng rng(10);
  const auto m = sample_pretrain_mask(4, {8, 12, 16}, 4, 0.875, rng);
  const auto v = m.voxel_mask();
  CHECK(v.sizes() == torch::IntArrayRef({4, 8, 12, 16}));
  CHECK(v.to(torch::kFloat64).mean().item<double>() == doctest::Approx(masked_fraction(m)));
  for (int c = 0; c < 4; ++c)
    for (int d = 0; d < 8; d += 3)
      for (int w = 0; w < 16; w += 5) CHECK(v[c][d][5][w].item<bool>() == m.masked(c, d / 4, 5 / 4, w / 4));
}

TEST_CASE("mask records round-trip") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const auto m = sample_pretrain_mask(4, {32, 16, 48}, 8, 0.875, rng);
    const auto bytes = m.serialize();
    CHECK(MaskSpec::deserialize(bytes) == m);
  }
  CHECK_THROWS(MaskSpec::deserialize({1, 2, 3}));
}
