#pragma once

#include <torch/torch.h>

#include <map>
#include <vector>

namespace m3ae {

struct LossWeights {
  double lambda_con = 0.1;   // consistency weight in the fine-tuning objective
  double gamma_reg = 0.005;  // L2 weight on the substitute image
  double dice_smooth = 1e-5;

  void validate() const;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside cross-entropy.
inline constexpr double kProbClamp = 1e-7;

torch::Tensor recon_mse(const torch::Tensor& x_hat, const torch::Tensor& x);

/// Mean of squared entries; the caller applies the weight.
torch::Tensor l2_reg(const torch::Tensor& x_sub);

/// Mean over channels of (1 - soft Dice) plus voxel-mean binary cross-entropy.
/// `prob` and `gt` are C x D x H x W; gt may be bool or floating point.
torch::Tensor dice_ce(const torch::Tensor& prob, const torch::Tensor& gt, double smooth = 1e-5);

/// Unweighted sum of dice_ce over every scale in `probs`, keyed by scale
/// divisor. Coarse predictions are trilinearly upsampled to the size of gt.
/// Throws when a divisor listed in `required` is absent.
torch::Tensor seg_loss(const std::map<int, torch::Tensor>& probs, const torch::Tensor& gt,
                       const std::vector<int>& required, double smooth = 1e-5);

/// Mean squared difference of two bottleneck feature maps. Gradients reach both.
torch::Tensor consistency(const torch::Tensor& f0, const torch::Tensor& f1);

struct PretrainLoss {
  torch::Tensor mse;
  torch::Tensor reg;
  torch::Tensor total;  // mse + gamma * reg
};

PretrainLoss pretrain_objective(const torch::Tensor& recon, const torch::Tensor& x, const torch::Tensor& x_sub,
                                const LossWeights& weights);

struct FinetuneLoss {
  torch::Tensor seg0;
  torch::Tensor seg1;
  torch::Tensor con;
  torch::Tensor total;  // lambda * con + seg0 + seg1
};

FinetuneLoss finetune_objective(const torch::Tensor& seg0, const torch::Tensor& seg1, const torch::Tensor& con,
                                const LossWeights& weights);

}  // namespace m3ae
