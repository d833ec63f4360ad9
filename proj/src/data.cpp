#include "m3ae/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "m3ae/error.hpp"
#include "m3ae/volume_io.hpp"

namespace m3ae {
namespace {

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};

  bool contains(double z, double y, double x) const {
    const double dz = (z - center[0]) / radii[0];
    const double dy = (y - center[1]) / radii[1];
    const double dx = (x - center[2]) / radii[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

// Child ellipsoid whose radii are a random fraction of the parent's and whose
// center is jittered by at most half the radius slack.
Ellipsoid nested(const Ellipsoid& parent, double lo, double hi, Rng& rng) {
  Ellipsoid child;
  for (int a = 0; a < 3; ++a) {
    child.radii[a] = parent.radii[a] * rng.uniform(lo, hi);
    const double slack = 0.5 * (parent.radii[a] - child.radii[a]);
    child.center[a] = parent.center[a] + rng.uniform(-slack, slack);
  }
  return child;
}

}  // namespace

std::vector<ContrastProfile> default_contrast_profiles() {
  //                 brain edema core  enhancing
  return {
      {"flair", {0.35, 0.85, 0.70, 0.70}, {0.02, 0.02, 0.02, 0.02}},
      {"t1", {0.55, 0.45, 0.30, 0.30}, {0.02, 0.02, 0.02, 0.02}},
      {"t1c", {0.50, 0.60, 0.60, 0.90}, {0.02, 0.02, 0.02, 0.02}},
      {"t2", {0.40, 0.85, 0.65, 0.65}, {0.02, 0.02, 0.02, 0.02}},
  };
}

const std::vector<ContrastProfile>& PhantomConfig::profiles() const {
  static const std::vector<ContrastProfile> defaults = default_contrast_profiles();
  return contrast_profiles.empty() ? defaults : contrast_profiles;
}

void PhantomConfig::validate() const {
  if (subject_count <= 0) throw ConfigError("phantom subject_count must be positive");
  if (patch_side <= 0) throw ConfigError("phantom patch_side must be positive");
  if (volume_side <= 0 || volume_side % 8 != 0 || volume_side % patch_side != 0)
    throw ConfigError("phantom volume_side " + std::to_string(volume_side) +
                      " must be divisible by 8 and by the patch side " + std::to_string(patch_side));
  if (modality_count < 2) throw ConfigError("phantom needs at least two modalities");
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom noise_sigma must be non-negative");
  const auto& p = profiles();
  if (static_cast<int>(p.size()) != modality_count)
    throw ConfigError("phantom needs one contrast profile per modality");
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      if (p[i].mean == p[j].mean)
        throw ConfigError("contrast profiles of " + p[i].name + " and " + p[j].name + " are identical");
}

std::vector<Subject> generate_phantom(const PhantomConfig& config) {
  config.validate();
  const auto& profiles = config.profiles();
  const int side = config.volume_side;
  const int n = config.modality_count;

  std::vector<Subject> subjects;
  subjects.reserve(config.subject_count);
  for (int s = 0; s < config.subject_count; ++s) {
    Rng rng = Rng::derive(config.seed, {0x9a47u, static_cast<std::uint64_t>(s)});

    Ellipsoid brain;
    for (int a = 0; a < 3; ++a) {
      brain.center[a] = 0.5 * (side - 1) + rng.uniform(-0.03, 0.03) * side;
      brain.radii[a] = rng.uniform(0.40, 0.46) * side;
    }
    Ellipsoid whole;
    for (int a = 0; a < 3; ++a) {
      whole.radii[a] = rng.uniform(0.15, 0.25) * side;
      const double slack = std::max(0.0, 0.6 * (brain.radii[a] - whole.radii[a] - 1.0));
      whole.center[a] = brain.center[a] + rng.uniform(-slack, slack);
    }
    const Ellipsoid core = nested(whole, 0.50, 0.75, rng);
    const Ellipsoid enhancing = nested(core, 0.45, 0.70, rng);

    std::vector<std::array<double, kTissueCount>> subject_mean(n);
    for (int m = 0; m < n; ++m)
      for (int t = 0; t < kTissueCount; ++t)
        subject_mean[m][t] = profiles[m].mean[t] + rng.normal(0.0, profiles[m].subject_std[t]);

    auto image = torch::zeros({n, side, side, side}, torch::kFloat32);
    auto labels = torch::zeros({side, side, side}, torch::kUInt8);
    auto img = image.accessor<float, 4>();
    auto lab = labels.accessor<std::uint8_t, 3>();
    for (int z = 0; z < side; ++z)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          if (!brain.contains(z, y, x)) continue;
          Tissue tissue = Tissue::kBrain;
          std::uint8_t label = 0;
          if (whole.contains(z, y, x)) {
            tissue = Tissue::kEdema;
            label = 2;
            if (core.contains(z, y, x)) {
              tissue = Tissue::kCore;
              label = 1;
              if (enhancing.contains(z, y, x)) {
                tissue = Tissue::kEnhancing;
                label = 4;
              }
            }
          }
          lab[z][y][x] = label;
          for (int m = 0; m < n; ++m) {
            const double v = subject_mean[m][static_cast<int>(tissue)] + rng.normal(0.0, config.noise_sigma);
            img[m][z][y][x] = static_cast<float>(std::max(v, 1e-3));
          }
        }

    Subject subject;
    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%04d", s);
    subject.id = id;
    subject.image.voxels = image;
    subject.image.available.assign(n, true);
    subject.label.labels = labels;
    subjects.push_back(std::move(subject));
  }
  return subjects;
}

double percentile_linear(std::vector<double>& values, double q) {
  if (values.empty()) throw PreprocessError("percentile of an empty sample");
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + lo, values.end());
  const double a = values[lo];
  if (hi == lo) return a;
  const double b = *std::min_element(values.begin() + lo + 1, values.end());
  return a + (rank - static_cast<double>(lo)) * (b - a);
}

double percentile_nearest(std::vector<float>& values, double q) {
  if (values.empty()) throw PreprocessError("percentile of an empty sample");
  const auto idx = static_cast<std::size_t>(std::llround(q / 100.0 * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + idx, values.end());
  return values[idx];
}

MultimodalVolume preprocess(const MultimodalVolume& volume) {
  volume.validate();
  auto src = volume.voxels.contiguous();
  const std::int64_t n = src.size(0);
  const std::int64_t count = src.numel() / n;

  // Foreground: voxels that are nonzero in any available modality.
  std::vector<std::uint8_t> foreground(count, 0);
  const float* data = src.data_ptr<float>();
  for (std::int64_t m = 0; m < n; ++m) {
    if (!volume.available[m]) continue;
    const float* ch = data + m * count;
    for (std::int64_t i = 0; i < count; ++i)
      if (ch[i] != 0.0f) foreground[i] = 1;
  }

  MultimodalVolume out = volume;
  out.voxels = torch::zeros_like(src);
  float* dst = out.voxels.data_ptr<float>();
  std::vector<float> sample;
  for (std::int64_t m = 0; m < n; ++m) {
    if (!volume.available[m]) continue;
    const float* ch = data + m * count;
    sample.clear();
    bool any_nonzero = false;
    for (std::int64_t i = 0; i < count; ++i) {
      if (!foreground[i]) continue;
      sample.push_back(ch[i]);
      any_nonzero = any_nonzero || ch[i] != 0.0f;
    }
    if (!any_nonzero) throw PreprocessError("modality " + std::to_string(m) + " is all zero");
    const double p1 = percentile_nearest(sample, 1.0);
    const double p99 = percentile_nearest(sample, 99.0);
    float* o = dst + m * count;
    for (std::int64_t i = 0; i < count; ++i) {
      if (!foreground[i]) continue;
      if (p99 <= p1) {
        o[i] = 0.0f;
        continue;
      }
      const double v = std::clamp(static_cast<double>(ch[i]), p1, p99);
      o[i] = static_cast<float>((v - p1) / (p99 - p1));
    }
  }
  return out;
}

CropWindow draw_crop(const std::array<std::int64_t, 3>& spatial, std::int64_t side, Rng& rng) {
  CropWindow w;
  w.side = side;
  for (int a = 0; a < 3; ++a) {
    if (side <= 0 || side > spatial[a])
      throw ShapeError("crop side " + std::to_string(side) + " exceeds volume dimension " +
                       std::to_string(spatial[a]));
    w.offset[a] = rng.uniform_int(0, spatial[a] - side);
  }
  return w;
}

Subject apply_crop(const Subject& subject, const CropWindow& w) {
  const auto spatial = subject.image.spatial();
  for (int a = 0; a < 3; ++a)
    if (w.offset[a] < 0 || w.offset[a] + w.side > spatial[a]) throw ShapeError("crop window out of bounds");
  Subject out = subject;
  out.image.voxels = subject.image.voxels.narrow(1, w.offset[0], w.side)
                         .narrow(2, w.offset[1], w.side)
                         .narrow(3, w.offset[2], w.side)
                         .contiguous();
  if (subject.label.labels.defined())
    out.label.labels = subject.label.labels.narrow(0, w.offset[0], w.side)
                           .narrow(1, w.offset[1], w.side)
                           .narrow(2, w.offset[2], w.side)
                           .contiguous();
  return out;
}

Subject random_crop(const Subject& subject, std::int64_t crop_side, Rng& rng) {
  return apply_crop(subject, draw_crop(subject.image.spatial(), crop_side, rng));
}

AugmentParams AugmentParams::identity(int modalities) {
  AugmentParams p;
  p.shift.assign(modalities, 0.0);
  p.scale.assign(modalities, 1.0);
  return p;
}

AugmentParams draw_augment(int modalities, Rng& rng) {
  AugmentParams p;
  for (int m = 0; m < modalities; ++m) {
    p.shift.push_back(rng.uniform(-0.1, 0.1));
    p.scale.push_back(rng.uniform(0.9, 1.1));
  }
  for (auto& f : p.flip) f = rng.bernoulli(0.5);
  return p;
}

Subject apply_augment(const Subject& subject, const AugmentParams& params) {
  const auto n = subject.image.modalities();
  if (static_cast<std::int64_t>(params.shift.size()) != n || static_cast<std::int64_t>(params.scale.size()) != n)
    throw ShapeError("augmentation parameters do not match modality count");
  Subject out = subject;
  auto voxels = subject.image.voxels.clone();
  for (std::int64_t m = 0; m < n; ++m) {
    auto ch = voxels[m];
    if (params.shift[m] != 0.0) ch.add_(params.shift[m]);
    if (params.scale[m] != 1.0) ch.mul_(params.scale[m]);
  }
  std::vector<std::int64_t> image_dims, label_dims;
  for (int a = 0; a < 3; ++a)
    if (params.flip[a]) {
      image_dims.push_back(a + 1);
      label_dims.push_back(a);
    }
  if (!image_dims.empty()) {
    voxels = torch::flip(voxels, image_dims).contiguous();
    if (subject.label.labels.defined())
      out.label.labels = torch::flip(subject.label.labels, label_dims).contiguous();
  }
  out.image.voxels = voxels;
  return out;
}

Subject augment(const Subject& subject, Rng& rng) {
  return apply_augment(subject, draw_augment(static_cast<int>(subject.image.modalities()), rng));
}

RegionChannels labels_to_regions(const LabelVolume& labels) {
  const auto& l = labels.labels;
  if (!l.defined() || l.dim() != 3) throw ShapeError("label volume must be D x H x W");
  const auto bad = (l == 3) | (l > 4);
  if (bad.any().item<bool>()) throw IngestError("label volume contains values outside {0, 1, 2, 4}");
  RegionChannels r;
  r.regions = torch::stack({l > 0, (l == 1) | (l == 4), l == 4});
  return r;
}

LabelVolume regions_to_labels(const torch::Tensor& regions) {
  if (regions.dim() != 4 || regions.size(0) != 3) throw ShapeError("region channels must be 3 x D x H x W");
  auto r = regions.to(torch::kBool);
  auto zero = torch::zeros(r[0].sizes(), torch::kUInt8);
  LabelVolume out;
  out.labels = torch::where(r[2], torch::full_like(zero, 4),
                            torch::where(r[1], torch::full_like(zero, 1),
                                         torch::where(r[0], torch::full_like(zero, 2), zero)));
  return out;
}

namespace {

LabelVolume label_from_float(const torch::Tensor& t, const std::filesystem::path& path) {
  auto rounded = t.round();
  if (!torch::equal(rounded, t) || (t < 0).any().item<bool>() || (t > 4).any().item<bool>() ||
      (t == 3).any().item<bool>())
    throw IngestError("label file " + path.string() + " contains values outside {0, 1, 2, 4}");
  return LabelVolume{rounded.to(torch::kUInt8).contiguous()};
}

}  // namespace

Subject load_subject(const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) throw IngestError("subject directory not found: " + directory.string());
  Subject subject;
  subject.id = directory.filename().string();

  if (fs::exists(directory / "image.m3v")) {
    if (!fs::exists(directory / "label.m3v"))
      throw IngestError("missing label file " + (directory / "label.m3v").string());
    auto image = read_volume_file(directory / "image.m3v", torch::kFloat32);
    auto labels = read_volume_file(directory / "label.m3v", torch::kUInt8);
    if (labels.size(0) != 1) throw IngestError("label file must hold a single channel");
    labels = labels[0].contiguous();
    if (image.size(1) != labels.size(0) || image.size(2) != labels.size(1) || image.size(3) != labels.size(2))
      throw IngestError("label shape does not match image shape in " + directory.string());
    subject.image.voxels = image;
    subject.image.available.assign(image.size(0), true);
    subject.label.labels = labels;
    labels_to_regions(subject.label);  // validates the label values
    subject.image.validate();
    return subject;
  }

  // BraTS layout: <case>_<suffix>.nii[.gz]
  const std::array<std::string, 4> suffixes = {"_flair", "_t1", "_t1ce", "_t2"};
  std::array<fs::path, 4> found;
  fs::path seg;
  for (const auto& entry : fs::directory_iterator(directory)) {
    std::string name = entry.path().filename().string();
    std::string stem = name;
    for (const std::string ext : {".nii.gz", ".nii"})
      if (stem.size() > ext.size() && stem.compare(stem.size() - ext.size(), ext.size(), ext) == 0) {
        stem.resize(stem.size() - ext.size());
        break;
      }
    if (stem == name) continue;
    auto has_suffix = [&stem](const std::string& s) {
      return stem.size() >= s.size() && stem.compare(stem.size() - s.size(), s.size(), s) == 0;
    };
    if (has_suffix("_seg")) seg = entry.path();
    for (std::size_t m = 0; m < suffixes.size(); ++m)
      if (has_suffix(suffixes[m])) found[m] = entry.path();
  }
  if (seg.empty()) throw IngestError("missing label file (*_seg.nii.gz) in " + directory.string());

  const auto label_img = read_nifti(seg);
  const auto spatial = label_img.data.sizes().vec();
  auto voxels = torch::zeros({4, spatial[0], spatial[1], spatial[2]}, torch::kFloat32);
  subject.image.available.assign(4, false);
  for (std::size_t m = 0; m < found.size(); ++m) {
    if (found[m].empty()) continue;
    const auto img = read_nifti(found[m]);
    if (img.data.sizes().vec() != spatial)
      throw IngestError("shape mismatch between " + found[m].string() + " and " + seg.string());
    voxels[m].copy_(img.data);
    subject.image.available[m] = true;
  }
  if (std::none_of(subject.image.available.begin(), subject.image.available.end(), [](bool b) { return b; }))
    throw IngestError("no modality files found in " + directory.string());
  subject.image.voxels = voxels;
  subject.image.spacing = label_img.spacing;
  subject.label = label_from_float(label_img.data, seg);
  subject.image.validate();
  return subject;
}

void save_subject(const Subject& subject, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  write_volume_file(directory / "image.m3v", subject.image.voxels);
  write_volume_file(directory / "label.m3v", subject.label.labels);
}

std::vector<Subject> load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IngestError("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && entry.path().filename() != "manifests") dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Subject> out;
  for (const auto& d : dirs) out.push_back(load_subject(d));
  return out;
}

}  // namespace m3ae
