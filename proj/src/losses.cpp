#include "m3ae/losses.hpp"

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_con < 0 || gamma_reg < 0 || dice_smooth < 0) throw ConfigError("loss weights must be non-negative");
}

torch::Tensor recon_mse(const torch::Tensor& x_hat, const torch::Tensor& x) {
  require_same_shape(x_hat, x, "recon_mse");
  return (x_hat - x).pow(2).mean();
}

torch::Tensor l2_reg(const torch::Tensor& x_sub) { return x_sub.pow(2).mean(); }

torch::Tensor dice_ce(const torch::Tensor& prob, const torch::Tensor& gt, double smooth) {
  require_same_shape(prob, gt, "dice_ce");
  if (torch::isnan(prob).any().item<bool>()) throw NumericError("dice_ce: NaN in predicted probabilities");
  const auto g = gt.to(prob.scalar_type());
  const auto p = prob.flatten(1);
  const auto gf = g.flatten(1);
  const auto inter = (p * gf).sum(1);
  const auto dice = (2.0 * inter + smooth) / (p.sum(1) + gf.sum(1) + smooth);
  const auto dice_loss = (1.0 - dice).mean();
  const auto pc = prob.clamp(kProbClamp, 1.0 - kProbClamp);
  const auto ce = -(g * pc.log() + (1.0 - g) * (1.0 - pc).log()).mean();
  return dice_loss + ce;
}

torch::Tensor seg_loss(const std::map<int, torch::Tensor>& probs, const torch::Tensor& gt,
                       const std::vector<int>& required, double smooth) {
  for (int div : required)
    if (!probs.count(div)) throw ShapeError("seg_loss: missing prediction at scale 1/" + std::to_string(div));
  if (probs.empty()) throw ShapeError("seg_loss: no predictions");
  const std::vector<std::int64_t> size(gt.sizes().begin() + 1, gt.sizes().end());
  torch::Tensor total;
  for (const auto& [div, prob] : probs) {
    torch::Tensor full = prob;
    if (prob.sizes().slice(1) != gt.sizes().slice(1)) {
      full = torch::nn::functional::interpolate(
                 prob.unsqueeze(0),
                 torch::nn::functional::InterpolateFuncOptions().size(size).mode(torch::kTrilinear).align_corners(false))
                 .squeeze(0);
    }
    auto term = dice_ce(full, gt, smooth);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor consistency(const torch::Tensor& f0, const torch::Tensor& f1) {
  require_same_shape(f0, f1, "consistency");
  return (f0 - f1).pow(2).mean();
}

PretrainLoss pretrain_objective(const torch::Tensor& recon, const torch::Tensor& x, const torch::Tensor& x_sub,
                                const LossWeights& weights) {
  PretrainLoss out;
  out.mse = recon_mse(recon, x);
  out.reg = l2_reg(x_sub);
  out.total = out.mse + weights.gamma_reg * out.reg;
  return out;
}

FinetuneLoss finetune_objective(const torch::Tensor& seg0, const torch::Tensor& seg1, const torch::Tensor& con,
                                const LossWeights& weights) {
  FinetuneLoss out{seg0, seg1, con, weights.lambda_con * con + seg0 + seg1};
  return out;
}

}  // namespace m3ae
