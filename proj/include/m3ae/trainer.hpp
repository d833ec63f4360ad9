#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "m3ae/checkpoint.hpp"
#include "m3ae/config.hpp"
#include "m3ae/data.hpp"
#include "m3ae/inversion.hpp"
#include "m3ae/losses.hpp"
#include "m3ae/masking.hpp"
#include "m3ae/network.hpp"

namespace m3ae {

enum class Stage { kPretrain, kFinetune };
std::string to_string(Stage stage);

/// Cosine decay from lr0 at step 0 to 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, double lr0);

/// One cropped, augmented and masked pretraining sample.
struct PretrainItem {
  int subject = 0;
  CropWindow crop;
  AugmentParams aug;
  MaskSpec mask;
  torch::Tensor x;     // N x c x c x c
  torch::Tensor mask_voxels;  // N x c x c x c bool
};

/// One cropped and augmented subject with its two kept-modality subsets.
struct FinetuneItem {
  int subject = 0;
  CropWindow crop;
  AugmentParams aug;
  ModalitySet view_a;
  ModalitySet view_b;
  torch::Tensor x;        // N x c x c x c
  torch::Tensor regions;  // 3 x c x c x c bool
};

PretrainItem prepare_pretrain_item(const Subject& subject, int index, const TrainConfig& config, Rng& rng);
FinetuneItem prepare_finetune_item(const Subject& subject, int index, const TrainConfig& config, Rng& rng);

/// Reconstruction objective for a batch: x and mask are B x N x D x H x W,
/// fill is N x D x H x W. The regularizer is included only when
/// `regularize` is set (a trainable substitute).
PretrainLoss pretrain_loss(UNet3d& net, const torch::Tensor& x, const torch::Tensor& mask, const torch::Tensor& fill,
                           bool regularize, const LossWeights& weights);

/// Fine-tuning objective for one subject seen under two kept subsets. Both
/// views share `x` (N x D x H x W) and `regions` (3 x D x H x W).
FinetuneLoss finetune_loss(UNet3d& net, const torch::Tensor& x, const torch::Tensor& regions, const ModalitySet& a,
                           const ModalitySet& b, const torch::Tensor& fill, const LossWeights& weights, bool distill);

/// Mutable state owned by the training loop.
struct TrainState {
  TrainConfig config;
  Stage stage = Stage::kPretrain;
  UNet3d net{nullptr};
  std::shared_ptr<torch::optim::Adam> optimizer;
  SubstituteImage substitute;
  int epoch = 0;                // completed epochs
  std::int64_t global_step = 0;  // completed optimizer steps
  std::int64_t total_steps = 0;
};

/// Per-modality foreground mean over a dataset, used by the mean-fill ablation.
std::vector<double> modality_means(const std::vector<Subject>& subjects);

/// Fresh stage-1 state; the substitute follows config.fill.
TrainState make_pretrain_state(const TrainConfig& config, const std::vector<Subject>& train);
/// Stage-2 state: swaps the heads, freezes the substitute and resets the
/// optimizer. `pretrained` may be null only for a from-scratch run.
TrainState make_finetune_state(const TrainConfig& config, const Checkpoint* pretrained,
                               const std::vector<Subject>& train);

struct StepLosses {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  // Stage 1
  double mse = 0.0;
  double reg = 0.0;
  // Stage 2
  double seg0 = 0.0;
  double seg1 = 0.0;
  double con = 0.0;
  double total = 0.0;
};

StepLosses pretrain_step(TrainState& state, const std::vector<PretrainItem>& batch);
StepLosses finetune_step(TrainState& state, const FinetuneItem& item);

Checkpoint to_checkpoint(TrainState& state);
TrainState from_checkpoint(const Checkpoint& ckpt);

/// Sampling decisions of one step, for reproducibility logs.
struct StepTrace {
  std::int64_t step = 0;
  int epoch = 0;
  std::vector<int> subjects;
  std::vector<CropWindow> crops;
  std::vector<std::array<bool, 3>> flips;
  std::vector<std::string> masks;  // hex of MaskSpec::serialize, stage 1
  std::vector<std::uint32_t> kept; // view subsets, stage 2

  std::string csv_row() const;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;      // checkpoint of the same stage
  std::optional<std::filesystem::path> pretrained;  // stage-1 checkpoint for stage 2
  bool from_scratch = false;
  int stop_after_epoch = -1;  // stop early (for resume tests); -1 = run to the end
  bool quiet = false;
  std::function<void(const StepLosses&, const StepTrace&)> on_step;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_csv;
  std::filesystem::path trace_csv;
  std::vector<double> epoch_mean_loss;  // stage 1: L_mse, stage 2: total
};

/// Runs one stage over preprocessed, complete subjects. Writes
/// <out>/<stage>_loss.csv, <stage>_trace.csv, checkpoints/<stage>_eXXXX.ckpt
/// every checkpoint_every epochs, and <stage>_final.ckpt.
RunResult run_stage(const TrainConfig& config, Stage stage, const std::vector<Subject>& train,
                    const RunOptions& options);

}  // namespace m3ae
