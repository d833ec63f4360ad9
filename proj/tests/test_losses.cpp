#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include "m3ae/error.hpp"
#include "m3ae/losses.hpp"
#include "m3ae/rng.hpp"
#include "support.hpp"

using namespace m3ae;

namespace {

const auto kDouble = torch::TensorOptions().dtype(torch::kFloat64);

// Checks d(loss)/d(t) against central differences at `count` random coordinates.
void check_gradient(torch::Tensor t, const std::function<torch::Tensor()>& loss, int count, double tol,
                    std::uint64_t seed) {
  t.requires_grad_(true);
  if (t.grad().defined()) t.grad().zero_();
  loss().backward();
  const auto grad = t.grad().clone().view({-1});
  Rng rng(seed);
  auto data = t.detach();
  for (int i = 0; i < count; ++i) {
    const auto idx = rng.uniform_int(0, t.numel() - 1);
    const double numeric = testing::central_difference(data, idx, 1e-6, [&] {
      torch::NoGradGuard guard;
      return loss().item<double>();
    });
    CHECK(testing::relative_error(grad[idx].item<double>(), numeric) < tol);
  }
}

}  // namespace

TEST_CASE("recon_mse") {
  const auto x = torch::rand({4, 6, 6, 6}, kDouble);
  CHECK(recon_mse(x, x).item<double>() == 0.0);
  CHECK(recon_mse(x + 0.1, x).item<double>() == doctest::Approx(0.01).epsilon(1e-9));
  const auto y = torch::rand({4, 6, 6, 6}, kDouble);
  CHECK(recon_mse(x, y).item<double>() == recon_mse(y, x).item<double>());
  CHECK_THROWS_AS(recon_mse(x, torch::rand({4, 6, 6, 5}, kDouble)), ShapeError);
}

TEST_CASE("l2_reg") {
  CHECK(l2_reg(torch::zeros({2, 3, 3, 3})).item<double>() == 0.0);
  CHECK(l2_reg(torch::ones({2, 3, 3, 3})).item<double>() == 1.0);
  const auto x = torch::randn({2, 4, 4, 4}, kDouble);
  CHECK(l2_reg(3.0 * x).item<double>() == doctest::Approx(9.0 * l2_reg(x).item<double>()).epsilon(1e-12));
}

TEST_CASE("dice_ce") {
  SUBCASE("perfect binary prediction") {
    const auto gt = torch::rand({3, 8, 8, 8}) > 0.5;
    CHECK(dice_ce(gt.to(torch::kFloat32), gt).item<double>() <= 1e-4);
  }
  SUBCASE("cross-entropy at p = 0.5 is ln 2") {
    const auto gt = torch::ones({1, 4, 4, 4}, kDouble);
    const auto prob = torch::full({1, 4, 4, 4}, 0.5, kDouble);
    const double n = 64.0, eps = 1e-5;
    const double dice = (2.0 * 0.5 * n + eps) / (0.5 * n + n + eps);
    const double ce = dice_ce(prob, gt, eps).item<double>() - (1.0 - dice);
    CHECK(std::abs(ce - std::log(2.0)) < 1e-6);
  }
  SUBCASE("hand-computed two-voxel case") {
    const auto prob = torch::tensor({0.8, 0.3}, kDouble).reshape({1, 2, 1, 1});
    const auto gt = torch::tensor({1.0, 0.0}, kDouble).reshape({1, 2, 1, 1});
    const double eps = 1e-5;
    const double dice = (2.0 * 0.8 + eps) / (1.1 + 1.0 + eps);
    const double ce = -(std::log(0.8) + std::log(0.7)) / 2.0;
    CHECK(std::abs(dice_ce(prob, gt, eps).item<double>() - (1.0 - dice + ce)) <= 1e-4);
  }
  SUBCASE("invariant under a shared spatial permutation") {
    const auto prob = torch::rand({3, 5, 5, 5}, kDouble) * 0.9 + 0.05;
    const auto gt = torch::rand({3, 5, 5, 5}) > 0.6;
    const auto perm = torch::randperm(125);
    const auto p2 = prob.reshape({3, 125}).index_select(1, perm).reshape({3, 5, 5, 5});
    const auto g2 = gt.reshape({3, 125}).index_select(1, perm).reshape({3, 5, 5, 5});
    CHECK(dice_ce(p2, g2).item<double>() == doctest::Approx(dice_ce(prob, gt).item<double>()).epsilon(1e-12));
  }
  SUBCASE("NaN input is rejected") {
    auto prob = torch::full({3, 2, 2, 2}, 0.5);
    prob[0][0][0][0] = std::nan("");
    CHECK_THROWS_AS(dice_ce(prob, torch::ones({3, 2, 2, 2})), NumericError);
  }
  SUBCASE("non-negative") {
    for (int i = 0; i < 20; ++i) {
      const auto prob = torch::rand({3, 4, 4, 4});
      CHECK(dice_ce(prob, torch::rand({3, 4, 4, 4}) > 0.5).item<double>() >= 0.0);
    }
  }
}

TEST_CASE("seg_loss sums dice_ce over upsampled scales") {
  const auto gt = torch::rand({3, 8, 8, 8}) > 0.5;
  SUBCASE("perfect at every scale") {
    // Coarse maps that upsample exactly to gt: constant volumes.
    const auto ones = torch::ones({3, 8, 8, 8}, torch::kBool);
    std::map<int, torch::Tensor> probs = {{1, torch::ones({3, 8, 8, 8})},
                                          {2, torch::ones({3, 4, 4, 4})},
                                          {4, torch::ones({3, 2, 2, 2})}};
    CHECK(seg_loss(probs, ones, {1, 2, 4}).item<double>() <= 3e-4);
  }
  SUBCASE("identical predictions count three times") {
    std::map<int, torch::Tensor> probs = {{1, torch::full({3, 8, 8, 8}, 0.3, kDouble)},
                                          {2, torch::full({3, 4, 4, 4}, 0.3, kDouble)},
                                          {4, torch::full({3, 2, 2, 2}, 0.3, kDouble)}};
    const double one = dice_ce(probs[1], gt).item<double>();
    CHECK(seg_loss(probs, gt, {1, 2, 4}).item<double>() == doctest::Approx(3.0 * one).epsilon(1e-12));
  }
  SUBCASE("dropping the quarter scale removes exactly its term") {
    std::map<int, torch::Tensor> probs = {{1, torch::rand({3, 8, 8, 8}, kDouble)},
                                          {2, torch::rand({3, 4, 4, 4}, kDouble)},
                                          {4, torch::rand({3, 2, 2, 2}, kDouble)}};
    const double all = seg_loss(probs, gt, {1, 2, 4}).item<double>();
    const auto quarter = torch::nn::functional::interpolate(
        probs[4].unsqueeze(0), torch::nn::functional::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{8, 8, 8})
                                   .mode(torch::kTrilinear)
                                   .align_corners(false))[0];
    const double term = dice_ce(quarter, gt).item<double>();
    auto without = probs;
    without.erase(4);
    CHECK(all - seg_loss(without, gt, {1, 2}).item<double>() == doctest::Approx(term).epsilon(1e-12));
    CHECK_THROWS_AS(seg_loss(without, gt, {1, 2, 4}), ShapeError);
  }
}

TEST_CASE("consistency") {
  const auto f0 = torch::randn({8, 2, 2, 2}, kDouble);
  CHECK(consistency(f0, f0).item<double>() == 0.0);
  const auto f1 = torch::randn({8, 2, 2, 2}, kDouble);
  CHECK(consistency(f0, f1).item<double>() == consistency(f1, f0).item<double>());
  auto bumped = f0.clone();
  bumped[3][1][0][1] += 0.25;
  CHECK(consistency(f0, bumped).item<double>() == doctest::Approx(0.0625 / 64.0).epsilon(1e-12));
  CHECK_THROWS_AS(consistency(f0, torch::randn({8, 2, 2, 1})), ShapeError);

  // Gradient reaches both branches.
  auto a = f0.clone().requires_grad_(true);
  auto b = f1.clone().requires_grad_(true);
  consistency(a, b).backward();
  CHECK(a.grad().abs().sum().item<double>() > 0);
  CHECK(torch::allclose(a.grad(), -b.grad()));
}

TEST_CASE("loss gradients match central differences") {
  torch::manual_seed(12);
  auto x = torch::rand({2, 4, 4, 4}, kDouble);
  auto target = torch::rand({2, 4, 4, 4}, kDouble);
  check_gradient(x, [&] { return recon_mse(x, target); }, 20, 1e-4, 1);
  auto s = torch::randn({2, 4, 4, 4}, kDouble);
  check_gradient(s, [&] { return l2_reg(s); }, 20, 1e-4, 2);
  auto p = torch::rand({3, 4, 4, 4}, kDouble) * 0.8 + 0.1;
  const auto gt = torch::rand({3, 4, 4, 4}) > 0.5;
  check_gradient(p, [&] { return dice_ce(p, gt); }, 20, 1e-4, 3);
  auto f = torch::randn({8, 2, 2, 2}, kDouble);
  const auto g = torch::randn({8, 2, 2, 2}, kDouble);
  check_gradient(f, [&] { return consistency(f, g); }, 20, 1e-4, 4);
  auto coarse = torch::rand({3, 2, 2, 2}, kDouble) * 0.8 + 0.1;
  const auto full = torch::rand({3, 4, 4, 4}, kDouble) * 0.8 + 0.1;
  check_gradient(coarse, [&] { return seg_loss({{1, full}, {2, coarse}}, gt, {1, 2}); }, 20, 1e-4, 5);
}

TEST_CASE("objectives combine their terms") {
  LossWeights w;
  CHECK(w.lambda_con == 0.1);
  CHECK(w.gamma_reg == 0.005);
  const auto recon = torch::rand({1, 4, 4, 4, 4});
  const auto x = torch::rand({1, 4, 4, 4, 4});
  const auto sub = torch::randn({4, 4, 4, 4});
  const auto pre = pretrain_objective(recon, x, sub, w);
  CHECK(pre.total.item<float>() == (recon_mse(recon, x) + w.gamma_reg * l2_reg(sub)).item<float>());

  const auto seg0 = torch::tensor(0.731f), seg1 = torch::tensor(1.204f), con = torch::tensor(0.0573f);
  const auto fin = finetune_objective(seg0, seg1, con, w);
  CHECK(fin.total.item<float>() == (0.1f * con + seg0 + seg1).item<float>());
  w.lambda_con = 0.0;
  CHECK(finetune_objective(seg0, seg1, con, w).total.item<float>() == (seg0 + seg1).item<float>());

  w.gamma_reg = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
