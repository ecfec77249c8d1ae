#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <vector>

#include "cdnet/gradcheck.hpp"
#include "cdnet/losses.hpp"
#include "cdnet/rng.hpp"
#include "doctest.h"

using namespace cdnet;

namespace {

Tensor rand_mask(Rng& rng, Shape shape, double p1 = 0.5) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform() < p1 ? 1.0 : 0.0;
  return t;
}

Tensor rand_t(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("class weights follow the median-frequency rule") {
  // A 16x16 mask whose top-left 8x8 quadrant is change: frequencies are
  // 0.25 change / 0.75 background, so weights are 0.5/0.25 = 2 and
  // 0.5/0.75 = 2/3. Boundary bonus suppressed to isolate the class term.
  Tensor gt = Tensor::zeros({1, 1, 16, 16});
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x) gt[y * 16 + x] = 1.0;
  Tensor w = compute_weights(gt, /*w0=*/0.0);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) {
      const double want = gt[y * 16 + x] == 1.0 ? 2.0 : 2.0 / 3.0;
      CHECK(std::abs(w[y * 16 + x] - want) <= 1e-12);
    }
}

TEST_CASE("boundary pixels earn the extra weight and interiors do not") {
  Tensor gt = Tensor::zeros({1, 1, 8, 8});
  for (int64_t y = 2; y <= 5; ++y)
    for (int64_t x = 2; x <= 5; ++x) gt[y * 8 + x] = 1.0;
  const double w0 = 2.0;
  Tensor w = compute_weights(gt, w0);
  const double f1 = 16.0 / 64.0;
  const double w_ch = 0.5 / f1, w_bg = 0.5 / (1.0 - f1);

  CHECK(w[0] == doctest::Approx(w_bg).epsilon(1e-12));          // far corner
  CHECK(w[3 * 8 + 3] == doctest::Approx(w_ch).epsilon(1e-12));  // block interior
  // Pixels on either side of the label transition receive the bonus.
  CHECK(w[2 * 8 + 3] == doctest::Approx(w_ch + w0).epsilon(1e-12));
  CHECK(w[1 * 8 + 3] == doctest::Approx(w_bg + w0).epsilon(1e-12));

  // A checkerboard makes every pixel a boundary pixel.
  Tensor cb({1, 1, 4, 4}, 0.0);
  for (int64_t i = 0; i < 16; ++i) cb[i] = static_cast<double>((i / 4 + i % 4) % 2);
  Tensor wc = compute_weights(cb, w0);
  for (int64_t i = 0; i < 16; ++i) CHECK(wc[i] >= w0);
}

TEST_CASE("weights are unchanged when the mask is complemented") {
  Rng rng(71);
  for (int it = 0; it < 10; ++it) {
    Tensor gt = rand_mask(rng, {2, 1, 9, 9}, rng.uniform(0.2, 0.8));
    Tensor comp(gt.shape(), 0.0);
    for (int64_t i = 0; i < gt.numel(); ++i) comp[i] = 1.0 - gt[i];
    Tensor w1 = compute_weights(gt, 2.0);
    Tensor w2 = compute_weights(comp, 2.0);
    for (int64_t i = 0; i < w1.numel(); ++i)
      CHECK(std::abs(w1[i] - w2[i]) <= 1e-12);
  }
}

TEST_CASE("single-class masks weight the present class at one") {
  Tensor gt = Tensor::zeros({1, 1, 6, 6});
  Tensor w = compute_weights(gt, 2.0);
  for (int64_t i = 0; i < w.numel(); ++i) CHECK(w[i] == 1.0);

  CHECK_THROWS_AS((void)compute_weights(Tensor({1, 1, 2, 2}, 0.5), 2.0),
                  ShapeError);
}

TEST_CASE("cross entropy hits ln 2 at even odds and near zero when perfect") {
  Tensor gt = Tensor::zeros({1, 1, 6, 6});
  for (int64_t i = 0; i < 18; ++i) gt[i] = 1.0;
  Tensor ones(gt.shape(), 1.0);

  Tensor zero_logits = Tensor::zeros(gt.shape());
  CHECK(std::abs(wbce(zero_logits, gt, ones).item() - std::log(2.0)) <= 1e-9);

  // Confident correct logits: the clamp bounds the loss near zero.
  Tensor sharp(gt.shape(), 0.0);
  for (int64_t i = 0; i < gt.numel(); ++i) sharp[i] = gt[i] == 1.0 ? 40.0 : -40.0;
  CHECK(wbce(sharp, gt, ones).item() <= 2e-7);
  CHECK(wbce(sharp, gt, ones).item() >= 0.0);

  // The loss is linear in the weight map.
  Rng rng(73);
  Tensor logits = rand_t(rng, gt.shape(), -2.0, 2.0);
  Tensor twos(gt.shape(), 2.0);
  CHECK(std::abs(wbce(logits, gt, twos).item() -
                 2.0 * wbce(logits, gt, ones).item()) <= 1e-12);

  CHECK_THROWS_AS((void)wbce(logits, gt, Tensor::zeros({1, 1, 2, 2})),
                  ShapeError);
}

TEST_CASE("structural similarity is zero for identical maps") {
  Rng rng(79);
  Tensor p = rand_t(rng, {1, 1, 16, 16}, 0.0, 1.0);
  CHECK(std::abs(ssim_loss(p, p, 7).item()) <= 1e-9);

  // Two constant maps reduce to the zero-variance closed form. The variance
  // terms cancel only up to rounding, and eps divides that noise back up, so
  // the bound is 1e-10 rather than machine precision.
  const double c = 0.3, d = 0.7, eps = 1e-4;
  Tensor pc({1, 1, 12, 12}, c), gd({1, 1, 12, 12}, d);
  const double want =
      1.0 - (2.0 * c * d + eps) * eps / ((c * c + d * d + eps) * eps);
  CHECK(std::abs(ssim_loss(pc, gd, 7, eps).item() - want) <= 1e-10);

  CHECK_THROWS_AS((void)ssim_loss(rand_t(rng, {1, 1, 5, 5}, 0.0, 1.0),
                                  rand_t(rng, {1, 1, 5, 5}, 0.0, 1.0), 7),
                  ShapeError);
  CHECK_THROWS_AS((void)ssim_loss(p, p, 8), ShapeError);
}

TEST_CASE("soft overlap loss matches its closed forms") {
  Tensor g1({1, 1, 4, 4}, 1.0);
  Tensor half({1, 1, 4, 4}, 0.5);
  CHECK(std::abs(siou_loss(half, g1).item() - 0.5) <= 1e-9);

  Rng rng(83);
  Tensor gb = rand_mask(rng, {1, 1, 8, 8});
  CHECK(std::abs(siou_loss(gb, gb).item()) <= 1e-7);

  // Disjoint unit regions share no mass: the loss saturates at one.
  Tensor pa = Tensor::zeros({1, 1, 4, 4});
  Tensor gbb = Tensor::zeros({1, 1, 4, 4});
  pa[0] = 1.0;
  gbb[15] = 1.0;
  CHECK(siou_loss(pa, gbb).item() == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("loss ranges hold under fuzzing") {
  Rng rng(89);
  for (int it = 0; it < 25; ++it) {
    Tensor gt = rand_mask(rng, {1, 1, 12, 12});
    Tensor prob = rand_t(rng, gt.shape(), 0.0, 1.0);
    Tensor logits = rand_t(rng, gt.shape(), -4.0, 4.0);
    Tensor w = compute_weights(gt, 2.0);

    const double li = siou_loss(prob, gt).item();
    CHECK(li >= 0.0);
    CHECK(li <= 1.0);
    const double ls = ssim_loss(prob, gt, 7).item();
    CHECK(ls >= 0.0);
    CHECK(ls <= 2.0);
    CHECK(wbce(logits, gt, w).item() >= 0.0);
  }
}

TEST_CASE("flipping one pixel strictly raises every loss term") {
  Rng rng(97);
  Tensor gt = rand_mask(rng, {1, 1, 12, 12});
  Tensor prob(gt.shape(), 0.0);
  for (int64_t i = 0; i < gt.numel(); ++i) prob[i] = gt[i];
  Tensor logits(gt.shape(), 0.0);
  for (int64_t i = 0; i < gt.numel(); ++i) logits[i] = gt[i] == 1.0 ? 12.0 : -12.0;
  Tensor ones(gt.shape(), 1.0);

  const double base_w = wbce(logits, gt, ones).item();
  const double base_s = ssim_loss(prob, gt, 7).item();
  const double base_i = siou_loss(prob, gt).item();

  Tensor prob2(prob.shape(), prob.data());
  Tensor logits2(logits.shape(), logits.data());
  const int64_t flip = 5 * 12 + 7;
  prob2[flip] = 1.0 - prob2[flip];
  logits2[flip] = -logits2[flip];

  CHECK(wbce(logits2, gt, ones).item() > base_w);
  CHECK(ssim_loss(prob2, gt, 7).item() > base_s);
  CHECK(siou_loss(prob2, gt).item() > base_i);
}

TEST_CASE("the combined objective is an explicit sum over all six maps") {
  Rng rng(101);
  LossConfig cfg;
  cfg.ssim_patch = 7;
  cfg.alpha = {0.5, 1.0, 2.0, 0.25, 1.5};
  Tensor gt = rand_mask(rng, {1, 1, 16, 16});

  SideOutputs out;
  for (size_t s = 0; s < 5; ++s) out.side[s] = rand_t(rng, gt.shape(), -2.0, 2.0);
  out.fused = rand_t(rng, gt.shape(), -2.0, 2.0);

  LossBreakdown bd;
  const double total = hybrid_loss(out, gt, cfg, &bd).item();

  Tensor w = compute_weights(gt, cfg.boundary_weight);
  auto one = [&](const Tensor& logits) {
    Tensor prob = sigmoid(logits);
    return wbce(logits, gt, w, cfg.prob_clamp).item() +
           ssim_loss(prob, gt, cfg.ssim_patch, cfg.ssim_eps).item() +
           siou_loss(prob, gt).item();
  };
  double want = one(out.fused);
  for (size_t s = 0; s < 5; ++s) want += cfg.alpha[s] * one(out.side[s]);
  CHECK(std::abs(total - want) <= 1e-9);
  CHECK(std::abs(bd.total - total) <= 1e-15);
  CHECK(std::abs(bd.fused.total() - one(out.fused)) <= 1e-12);

  // All side weights at zero leave only the fused term.
  LossConfig only_fused = cfg;
  only_fused.alpha = {0.0, 0.0, 0.0, 0.0, 0.0};
  CHECK(std::abs(hybrid_loss(out, gt, only_fused).item() - one(out.fused)) <=
        1e-12);

  // Raising any single side weight never lowers the total.
  for (size_t s = 0; s < 5; ++s) {
    LossConfig up = cfg;
    up.alpha[s] += 1.0;
    CHECK(hybrid_loss(out, gt, up).item() >= total - 1e-12);
  }
}

TEST_CASE("a perfect prediction drives the combined objective to zero") {
  Rng rng(103);
  LossConfig cfg;
  cfg.ssim_patch = 7;
  Tensor gt = rand_mask(rng, {1, 1, 16, 16});
  Tensor sharp(gt.shape(), 0.0);
  for (int64_t i = 0; i < gt.numel(); ++i) sharp[i] = gt[i] == 1.0 ? 50.0 : -50.0;
  SideOutputs out;
  for (size_t s = 0; s < 5; ++s) out.side[s] = sharp;
  out.fused = sharp;
  // The floor is the probability clamp (1e-7) scaled by the per-pixel weights
  // and summed over the six heads, so ~1e-6; anything below 1e-5 is "zero".
  const double total = hybrid_loss(out, gt, cfg).item();
  CHECK(total >= 0.0);
  CHECK(total <= 1e-5);
}

TEST_CASE("analytic gradients of all three losses match finite differences") {
  Rng rng(107);
  const double tol = 1e-4;
  for (int it = 0; it < 10; ++it) {
    Tensor gt = rand_mask(rng, {1, 1, 16, 16});
    Tensor w = compute_weights(gt, 2.0);

    Tensor logits = rand_t(rng, gt.shape(), -2.0, 2.0);
    logits.set_requires_grad(true);
    GradCheckReport rw =
        gradcheck([&] { return wbce(logits, gt, w); }, {{"logits", logits}});
    CHECK_MESSAGE(rw.ok(tol), "wbce rel err ", rw.max_rel_err);

    Tensor prob = rand_t(rng, gt.shape(), 0.05, 0.95);
    prob.set_requires_grad(true);
    GradCheckReport rs =
        gradcheck([&] { return ssim_loss(prob, gt, 7); }, {{"prob", prob}});
    CHECK_MESSAGE(rs.ok(tol), "ssim rel err ", rs.max_rel_err);

    Tensor prob2 = rand_t(rng, gt.shape(), 0.05, 0.95);
    prob2.set_requires_grad(true);
    GradCheckReport ri =
        gradcheck([&] { return siou_loss(prob2, gt); }, {{"prob", prob2}});
    CHECK_MESSAGE(ri.ok(tol), "siou rel err ", ri.max_rel_err);
  }
}

TEST_CASE("loss configuration bounds are enforced") {
  LossConfig bad;
  bad.ssim_patch = 4;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = LossConfig{};
  bad.boundary_weight = -1.0;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = LossConfig{};
  bad.prob_clamp = 0.6;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = LossConfig{};
  bad.ssim_eps = 0.0;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}
