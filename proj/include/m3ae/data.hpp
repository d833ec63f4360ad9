#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m3ae/rng.hpp"
#include "m3ae/volume.hpp"

namespace m3ae {

/// Tissue classes rendered by the phantom generator.
enum class Tissue : int { kBrain = 0, kEdema = 1, kCore = 2, kEnhancing = 3 };
inline constexpr int kTissueCount = 4;

/// Intensity model of one modality: per-tissue mean, and the std of the
/// per-subject offset applied to that mean.
struct ContrastProfile {
  std::string name;
  std::array<double, kTissueCount> mean{};
  std::array<double, kTissueCount> subject_std{};
};

struct PhantomConfig {
  int subject_count = 50;
  int volume_side = 32;
  int modality_count = 4;
  int patch_side = 16;
  std::vector<ContrastProfile> contrast_profiles;  // empty -> default_contrast_profiles()
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;

  /// Throws ConfigError for a side not divisible by 8 and patch_side, or
  /// profiles that are missing or not pairwise distinct.
  void validate() const;
  const std::vector<ContrastProfile>& profiles() const;
};

/// FLAIR/T1/T1c/T2-like profiles. Each modality leaves at least one region
/// boundary invisible; together they separate all of them.
std::vector<ContrastProfile> default_contrast_profiles();

std::vector<Subject> generate_phantom(const PhantomConfig& config);

/// Per-modality percentile clipping to [p1, p99] followed by min-max scaling.
MultimodalVolume preprocess(const MultimodalVolume& volume);

/// Percentile of `values` (q in [0, 100]) by linear interpolation between
/// order statistics; partially reorders `values`.
double percentile_linear(std::vector<double>& values, double q);
/// Nearest-rank percentile: the order statistic at round(q/100 * (n - 1)).
double percentile_nearest(std::vector<float>& values, double q);

struct CropWindow {
  std::array<std::int64_t, 3> offset{};
  std::int64_t side = 0;
};

CropWindow draw_crop(const std::array<std::int64_t, 3>& spatial, std::int64_t side, Rng& rng);
Subject apply_crop(const Subject& subject, const CropWindow& window);
Subject random_crop(const Subject& subject, std::int64_t crop_side, Rng& rng);

struct AugmentParams {
  std::vector<double> shift;   // per modality
  std::vector<double> scale;   // per modality
  std::array<bool, 3> flip{};  // D, H, W

  static AugmentParams identity(int modalities);
};

AugmentParams draw_augment(int modalities, Rng& rng);
/// Intensity shift, then intensity scale, then flips. Labels only see the flips.
Subject apply_augment(const Subject& subject, const AugmentParams& params);
Subject augment(const Subject& subject, Rng& rng);

RegionChannels labels_to_regions(const LabelVolume& labels);
/// Inverse of labels_to_regions with precedence ET > TC > WT.
LabelVolume regions_to_labels(const torch::Tensor& regions);

/// Reads a subject directory: either BraTS-style `<case>_{flair,t1,t1ce,t2,seg}.nii.gz`
/// or a phantom pair `image.m3v` + `label.m3v`.
Subject load_subject(const std::filesystem::path& directory);

/// Writes a subject in the phantom binary layout.
void save_subject(const Subject& subject, const std::filesystem::path& directory);

/// Loads every subject directory below `root` in lexicographic order.
std::vector<Subject> load_dataset(const std::filesystem::path& root);

}  // namespace m3ae
