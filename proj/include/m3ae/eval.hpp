#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "m3ae/checkpoint.hpp"
#include "m3ae/network.hpp"
#include "m3ae/volume.hpp"

namespace m3ae {

/// Every non-empty kept subset. For four modalities the order follows the
/// usual results table (FLAIR, T1, T1c, T2 bits 0..3): singles, pairs,
/// triples, then all four. Other counts are ordered by size, then by bits.
std::vector<ModalitySet> enumerate_subsets(int modalities);

/// Parses "all" or a comma-separated list of subsets such as "flair,t1+t2".
std::vector<ModalitySet> parse_subsets(const std::string& text, const std::vector<std::string>& names);

/// 2|P n G| / (|P| + |G|); 1 when both are empty.
double dsc(const torch::Tensor& pred, const torch::Tensor& gt);

/// Voxels of the set with at least one 6-neighbour outside it (or outside the volume).
torch::Tensor boundary_voxels(const torch::Tensor& mask);

/// Exact Euclidean distance (mm) from every voxel to the nearest voxel of `sites`.
/// Infinite everywhere when `sites` is empty. Returns D x H x W float64.
torch::Tensor distance_transform(const torch::Tensor& sites, const std::array<double, 3>& spacing);

/// Max of the two directed 95th percentiles of boundary-to-boundary distances.
/// Both empty: 0. Exactly one empty: the volume diagonal in mm.
double hd95(const torch::Tensor& pred, const torch::Tensor& gt, const std::array<double, 3>& spacing);

/// Diagonal of a D x H x W volume in mm.
double volume_diagonal(const std::array<std::int64_t, 3>& spatial, const std::array<double, 3>& spacing);

/// Window start offsets along one axis: stride = window / 2, last window flush with the end.
std::vector<std::int64_t> window_starts(std::int64_t dim, std::int64_t window);

struct Prediction {
  torch::Tensor probs;  // 3 x D x H x W float32, averaged sigmoid outputs
  LabelVolume labels;
};

/// A fine-tuned network with its frozen substitute, ready for inference.
struct InferenceModel {
  UNet3d net{nullptr};
  torch::Tensor substitute;  // N x c x c x c
  std::vector<std::string> modality_names;
  double threshold = 0.5;
};

/// Rejects checkpoints without segmentation heads.
InferenceModel load_inference_model(const Checkpoint& ckpt);

/// Sliding-window inference with the missing channels of each window
/// replaced by the substitute. Only the full-resolution head is used.
Prediction infer(const InferenceModel& model, const MultimodalVolume& image, const ModalitySet& kept);

struct CaseResult {
  ModalitySet subset;
  int region = 0;  // index into kRegionNames
  std::string case_id;
  double dsc = 0.0;
  double hd95 = 0.0;
};

/// Runs every subset on every subject. Each kept modality must be available.
std::vector<CaseResult> evaluate(const InferenceModel& model, const std::vector<Subject>& subjects,
                                 const std::vector<ModalitySet>& subsets);

struct SubsetSummary {
  ModalitySet subset;
  std::array<double, 3> dsc_mean{}, dsc_std{}, hd95_mean{}, hd95_std{};
  int cases = 0;
};

struct Summary {
  std::vector<SubsetSummary> rows;
  std::array<double, 3> mean_dsc{}, mean_hd95{};  // mean of the per-subset means
};

/// Population standard deviation across cases. Throws when a subset or
/// region lacks results, or case counts differ between subsets.
Summary summarize(const std::vector<CaseResult>& results, const std::vector<ModalitySet>& subsets);

/// Writes metrics.csv, summary.csv and summary.png into `dir`.
Summary write_report(const std::filesystem::path& dir, const std::vector<CaseResult>& results,
                     const std::vector<ModalitySet>& subsets, const std::vector<std::string>& modality_names);

}  // namespace m3ae
