#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <fstream>
#include <set>

#include "m3ae/data.hpp"
#include "m3ae/error.hpp"
#include "m3ae/volume_io.hpp"
#include "support.hpp"

using namespace m3ae;

namespace {

PhantomConfig small_phantom(int subjects = 2) {
  PhantomConfig pc;
  pc.subject_count = subjects;
  pc.volume_side = 32;
  pc.seed = 7;
  return pc;
}

bool nested(const torch::Tensor& regions) {
  const auto wt = regions[0], tc = regions[1], et = regions[2];
  return !(et & ~tc).any().item<bool>() && !(tc & ~wt).any().item<bool>();
}

Subject ramp_subject(std::int64_t d, std::int64_t h, std::int64_t w) {
  Subject s;
  s.id = "ramp";
  s.image.voxels = torch::arange(4 * d * h * w, torch::kFloat32).reshape({4, d, h, w}) / (4.0 * d * h * w);
  s.image.available.assign(4, true);
  s.label.labels = (torch::arange(d * h * w) % 5).reshape({d, h, w}).to(torch::kUInt8);
  s.label.labels.masked_fill_(s.label.labels == 3, 0);
  return s;
}

}  // namespace

TEST_CASE("phantom generation is a pure function of its config") {
  const auto a = generate_phantom(small_phantom());
  const auto b = generate_phantom(small_phantom());
  REQUIRE(a.size() == 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(torch::equal(a[i].image.voxels, b[i].image.voxels));
    CHECK(torch::equal(a[i].label.labels, b[i].label.labels));
  }
  auto other = small_phantom();
  other.seed = 8;
  CHECK_FALSE(torch::equal(generate_phantom(other)[0].image.voxels, a[0].image.voxels));
}

TEST_CASE("phantom regions are nested and every label class occurs") {
  for (const auto& s : generate_phantom(small_phantom(6))) {
    const auto regions = labels_to_regions(s.label).regions;
    CHECK(nested(regions));
    for (int v : {0, 1, 2, 4}) CHECK((s.label.labels == v).any().item<bool>());
    CHECK(s.image.voxels.size(0) == 4);
    // Background outside the brain is exactly zero in every modality.
    CHECK(s.image.voxels.index({torch::indexing::Slice(), 0, 0, 0}).eq(0).all().item<bool>());
  }
}

TEST_CASE("phantom side must divide by 8 and the patch side") {
  auto pc = small_phantom();
  pc.volume_side = 33;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  CHECK_THROWS_AS(generate_phantom(pc), ConfigError);
  pc.volume_side = 24;  // divisible by 8, not by 16
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc.volume_side = 32;
  CHECK_NOTHROW(pc.validate());
  pc.contrast_profiles = default_contrast_profiles();
  pc.contrast_profiles[1] = pc.contrast_profiles[0];
  CHECK_THROWS_AS(pc.validate(), ConfigError);
}

TEST_CASE("region histograms follow the contrast profile") {
  auto pc = small_phantom(4);
  pc.contrast_profiles = default_contrast_profiles();
  for (auto& p : pc.contrast_profiles) p.subject_std.fill(0.0);
  // Modality 0 renders core and enhancing tumour alike; modality 2 separates them by 6 sigma.
  pc.contrast_profiles[0].mean[static_cast<int>(Tissue::kCore)] = 0.6;
  pc.contrast_profiles[0].mean[static_cast<int>(Tissue::kEnhancing)] = 0.6;
  pc.contrast_profiles[2].mean[static_cast<int>(Tissue::kCore)] = 0.5;
  pc.contrast_profiles[2].mean[static_cast<int>(Tissue::kEnhancing)] = 0.5 + 6 * pc.noise_sigma;
  std::vector<double> core0, et0, core2, et2;
  for (const auto& s : generate_phantom(pc)) {
    const auto core = s.label.labels == 1;
    const auto et = s.label.labels == 4;
    auto take = [](const torch::Tensor& v, const torch::Tensor& m, std::vector<double>& out) {
      const auto sel = v.masked_select(m).to(torch::kFloat64).contiguous();
      out.insert(out.end(), sel.data_ptr<double>(), sel.data_ptr<double>() + sel.numel());
    };
    take(s.image.voxels[0], core, core0);
    take(s.image.voxels[0], et, et0);
    take(s.image.voxels[2], core, core2);
    take(s.image.voxels[2], et, et2);
  }
  REQUIRE(core0.size() > 50);
  REQUIRE(et0.size() > 50);
  CHECK(testing::ks_two_sample_p(core0, et0) > 0.01);
  CHECK(testing::ks_two_sample_p(core2, et2) < 0.01);
}

TEST_CASE("volume files round-trip and reject bad headers") {
  testing::TempDir dir("vol");
  const auto img = torch::rand({4, 8, 8, 8});
  write_volume_file(dir.path() / "a.m3v", img);
  CHECK(torch::equal(read_volume_file(dir.path() / "a.m3v", torch::kFloat32), img));
  CHECK(std::filesystem::file_size(dir.path() / "a.m3v") == kVolumeHeaderBytes + img.numel() * 4);

  std::ofstream(dir.path() / "bad.m3v", std::ios::binary) << "NOTAVOLUME0123456789abcdef";
  try {
    read_volume_file(dir.path() / "bad.m3v", torch::kFloat32);
    FAIL("expected an ingestion error");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("bad.m3v") != std::string::npos);
  }
}

TEST_CASE("BraTS-style directories load with availability flags") {
  testing::TempDir dir("brats");
  const auto c = dir.path() / "case01";
  std::filesystem::create_directories(c);
  const std::array<double, 3> spacing{1.0, 1.0, 1.0};
  const auto vol = torch::rand({6, 7, 8}) + 0.1;
  auto seg = torch::zeros({6, 7, 8});
  seg.index_put_({2, 3, 4}, 4.0);
  seg.index_put_({2, 3, 5}, 2.0);
  seg.index_put_({2, 4, 4}, 1.0);
  for (const std::string m : {"flair", "t1", "t1ce", "t2"})
    write_nifti(c / ("case01_" + m + ".nii.gz"), vol * (m.size() + 1), spacing);
  write_nifti(c / "case01_seg.nii.gz", seg, spacing);

  auto s = load_subject(c);
  CHECK(s.image.available == std::vector<bool>{true, true, true, true});
  CHECK(torch::allclose(s.image.voxels[2], vol * 5));
  CHECK(s.label.labels[2][3][4].item<int>() == 4);
  CHECK(s.label.labels[2][4][4].item<int>() == 1);

  SUBCASE("absent T1 is zero-filled and flagged") {
    std::filesystem::remove(c / "case01_t1.nii.gz");
    s = load_subject(c);
    CHECK(s.image.available == std::vector<bool>{true, false, true, true});
    CHECK(s.image.voxels[1].eq(0).all().item<bool>());
  }
  SUBCASE("missing label file") {
    std::filesystem::remove(c / "case01_seg.nii.gz");
    CHECK_THROWS_AS(load_subject(c), IngestError);
  }
  SUBCASE("shape mismatch") {
    write_nifti(c / "case01_t2.nii.gz", torch::rand({6, 7, 9}), spacing);
    CHECK_THROWS_AS(load_subject(c), IngestError);
  }
  SUBCASE("corrupt header names the file") {
    std::ofstream(c / "case01_flair.nii", std::ios::binary) << std::string(100, 'x');
    std::filesystem::remove(c / "case01_flair.nii.gz");
    try {
      load_subject(c);
      FAIL("expected an ingestion error");
    } catch (const IngestError& e) {
      CHECK(std::string(e.what()).find("case01_flair.nii") != std::string::npos);
    }
  }
}

TEST_CASE("phantom directories round-trip through save and load") {
  testing::TempDir dir("phantom");
  const auto subjects = generate_phantom(small_phantom());
  for (const auto& s : subjects) save_subject(s, dir.path() / s.id);
  const auto loaded = load_dataset(dir.path());
  REQUIRE(loaded.size() == subjects.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == subjects[i].id);
    CHECK(torch::equal(loaded[i].image.voxels, subjects[i].image.voxels));
    CHECK(torch::equal(loaded[i].label.labels, subjects[i].label.labels));
  }
}

TEST_CASE("preprocess clips to percentiles and scales to the unit range") {
  SUBCASE("constant foreground maps to zero") {
    MultimodalVolume v;
    v.voxels = torch::full({2, 4, 4, 4}, 5.0f);
    v.voxels[1] = torch::rand({4, 4, 4}) + 1.0;
    v.available = {true, true};
    const auto out = preprocess(v);
    CHECK(out.voxels[0].eq(0).all().item<bool>());
  }
  SUBCASE("uniform foreground on [0, 100]") {
    torch::manual_seed(3);
    MultimodalVolume v;
    v.voxels = torch::rand({2, 40, 40, 40}) * 100.0;
    v.voxels.index_put_({0, 0, 0, 0}, 50.0f);
    v.voxels.index_put_({torch::indexing::Slice(), 39, torch::indexing::Slice(), torch::indexing::Slice()}, 0.0f);
    v.available = {true, true};
    std::vector<float> fg;
    const auto any = (v.voxels != 0).any(0);
    const auto sel = v.voxels[0].masked_select(any).contiguous();
    fg.assign(sel.data_ptr<float>(), sel.data_ptr<float>() + sel.numel());
    auto copy = fg;
    const double p1 = percentile_nearest(copy, 1.0);
    const double p99 = percentile_nearest(copy, 99.0);
    CHECK(p1 == doctest::Approx(1.0).epsilon(0.2));
    CHECK(p99 == doctest::Approx(99.0).epsilon(0.01));
    const auto out = preprocess(v);
    CHECK(out.voxels[0][0][0][0].item<double>() == doctest::Approx((50.0 - p1) / (p99 - p1)).epsilon(1e-6));
    CHECK(out.voxels[0][0][0][0].item<double>() == doctest::Approx(0.5).epsilon(0.02));
    CHECK(out.voxels.index({torch::indexing::Slice(), 39}).eq(0).all().item<bool>());
  }
  SUBCASE("random input lands in [0, 1] and is idempotent") {
    torch::manual_seed(4);
    MultimodalVolume v;
    v.voxels = torch::randn({4, 12, 12, 12}) * 30.0 + 10.0;
    v.voxels.masked_fill_(torch::rand({4, 12, 12, 12}) < 0.2, 0.0);
    v.available = {true, true, true, true};
    const auto once = preprocess(v);
    CHECK(once.voxels.min().item<float>() >= 0.0f);
    CHECK(once.voxels.max().item<float>() <= 1.0f);
    const auto twice = preprocess(once);
    CHECK((twice.voxels - once.voxels).abs().max().item<double>() <= 1e-6);
  }
  SUBCASE("all-zero modality is an error") {
    MultimodalVolume v;
    v.voxels = torch::rand({2, 4, 4, 4}) + 1.0;
    v.voxels[1].zero_();
    v.available = {true, true};
    CHECK_THROWS_AS(preprocess(v), PreprocessError);
  }
}

TEST_CASE("random crop") {
  const auto s = ramp_subject(8, 8, 8);
  Rng rng(1);
  const auto same = random_crop(s, 8, rng);
  CHECK(torch::equal(same.image.voxels, s.image.voxels));
  CHECK(torch::equal(same.label.labels, s.label.labels));

  Rng a(5), b(5);
  const auto wa = draw_crop({10, 9, 12}, 4, a);
  const auto wb = draw_crop({10, 9, 12}, 4, b);
  CHECK(wa.offset == wb.offset);

  const auto c = apply_crop(s, CropWindow{{1, 2, 3}, 4});
  CHECK(torch::equal(c.image.voxels, s.image.voxels.index({torch::indexing::Slice(), torch::indexing::Slice(1, 5),
                                                           torch::indexing::Slice(2, 6),
                                                           torch::indexing::Slice(3, 7)})));
  CHECK(torch::equal(c.label.labels, s.label.labels.index({torch::indexing::Slice(1, 5), torch::indexing::Slice(2, 6),
                                                           torch::indexing::Slice(3, 7)})));
  CHECK_THROWS_AS(random_crop(s, 9, rng), ShapeError);

  // Offsets cover every valid position.
  std::set<std::int64_t> seen;
  Rng r(9);
  for (int i = 0; i < 400; ++i) seen.insert(draw_crop({10, 10, 10}, 4, r).offset[0]);
  CHECK(seen.size() == 7);

  Subject big;
  big.image.voxels = torch::zeros({4, 240, 240, 155});
  big.image.available.assign(4, true);
  big.label.labels = torch::zeros({240, 240, 155}, torch::kUInt8);
  const auto cropped = random_crop(big, 128, r);
  CHECK(cropped.image.voxels.sizes() == torch::IntArrayRef({4, 128, 128, 128}));
  CHECK(cropped.label.labels.sizes() == torch::IntArrayRef({128, 128, 128}));
}

TEST_CASE("augmentation") {
  const auto s = ramp_subject(4, 5, 6);
  SUBCASE("identity draws leave the subject unchanged") {
    const auto out = apply_augment(s, AugmentParams::identity(4));
    CHECK(torch::equal(out.image.voxels, s.image.voxels));
    CHECK(torch::equal(out.label.labels, s.label.labels));
  }
  SUBCASE("shift then scale") {
    Subject one = s;
    one.image.voxels = torch::full({4, 2, 2, 2}, 0.5f);
    one.label.labels = torch::zeros({2, 2, 2}, torch::kUInt8);
    auto p = AugmentParams::identity(4);
    p.shift[0] = 0.1;
    p.scale[0] = 1.1;
    const auto out = apply_augment(one, p);
    CHECK(out.image.voxels[0][0][0][0].item<double>() == doctest::Approx(0.66).epsilon(1e-6));
    CHECK(out.image.voxels[1][0][0][0].item<float>() == 0.5f);
    CHECK(torch::equal(out.label.labels, one.label.labels));
  }
  SUBCASE("flips move labels with the image") {
    auto p = AugmentParams::identity(4);
    p.flip = {true, false, true};
    const auto out = apply_augment(s, p);
    CHECK(torch::equal(out.image.voxels, s.image.voxels.flip({1, 3})));
    CHECK(torch::equal(out.label.labels, s.label.labels.flip({0, 2})));
  }
  SUBCASE("draws lie in the stated ranges and are per modality") {
    Rng rng(11);
    bool differ = false;
    for (int i = 0; i < 200; ++i) {
      const auto p = draw_augment(4, rng);
      for (int m = 0; m < 4; ++m) {
        CHECK(std::abs(p.shift[m]) <= 0.1);
        CHECK(p.scale[m] >= 0.9);
        CHECK(p.scale[m] <= 1.1);
      }
      differ = differ || p.shift[0] != p.shift[1];
    }
    CHECK(differ);
  }
}

TEST_CASE("labels to regions") {
  LabelVolume l;
  l.labels = torch::tensor({0, 1, 2, 4}, torch::kUInt8).reshape({1, 1, 4});
  const auto r = labels_to_regions(l).regions;
  auto at = [&](int c, int i) { return r[c][0][0][i].item<bool>(); };
  CHECK((!at(0, 0) && !at(1, 0) && !at(2, 0)));
  CHECK((at(0, 1) && at(1, 1) && !at(2, 1)));
  CHECK((at(0, 2) && !at(1, 2) && !at(2, 2)));
  CHECK((at(0, 3) && at(1, 3) && at(2, 3)));
  CHECK(torch::equal(regions_to_labels(r).labels, l.labels));

  l.labels[0][0][0] = 3;
  CHECK_THROWS_AS(labels_to_regions(l), Error);
  l.labels[0][0][0] = 7;
  CHECK_THROWS_AS(labels_to_regions(l), Error);
}
