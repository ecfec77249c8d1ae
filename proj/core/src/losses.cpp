#include "cdnet/losses.hpp"

#include <cmath>

namespace cdnet {

void LossConfig::validate() const {
  if (boundary_weight < 0.0) throw ShapeError("boundary_weight must be >= 0");
  if (ssim_patch < 1 || ssim_patch % 2 == 0)
    throw ShapeError("ssim_patch must be odd and >= 1");
  if (ssim_eps <= 0.0) throw ShapeError("ssim_eps must be positive");
  if (prob_clamp <= 0.0 || prob_clamp >= 0.5)
    throw ShapeError("prob_clamp must lie in (0, 0.5)");
}

namespace {

void check_binary(const Tensor& gt, const char* who) {
  for (double v : gt.data())
    if (v != 0.0 && v != 1.0)
      throw ShapeError(std::string(who) + ": mask values must be exactly 0 or 1");
}

void check_rank4_mask(const Tensor& gt) {
  if (gt.rank() != 4 || gt.dim(1) != 1)
    throw ShapeError("mask must be [N,1,H,W], got " + shape_str(gt.shape()));
}

}  // namespace

Tensor compute_weights(const Tensor& gt, double w0) {
  check_rank4_mask(gt);
  check_binary(gt, "compute_weights");
  if (w0 < 0.0) throw ShapeError("boundary weight must be >= 0");
  const int64_t N = gt.dim(0), H = gt.dim(2), W = gt.dim(3);
  const auto& g = gt.data();
  const int64_t total = gt.numel();
  int64_t pos = 0;
  for (double v : g) pos += (v == 1.0);
  const double f1 = static_cast<double>(pos) / static_cast<double>(total);
  const double f0 = 1.0 - f1;
  // Median of the two-entry frequency vector is their mean, 0.5. A class
  // that is absent gets weight 1 for the present class (0.5 / 0.5).
  double w_bg = 1.0, w_ch = 1.0;
  if (pos != 0 && pos != total) {
    w_bg = 0.5 / f0;
    w_ch = 0.5 / f1;
  }
  Tensor w(gt.shape(), 0.0);
  auto& wd = w.data();
  for (int64_t n = 0; n < N; ++n) {
    const double* gp = g.data() + n * H * W;
    double* wp = wd.data() + n * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const double me = gp[y * W + x];
        double val = (me == 1.0) ? w_ch : w_bg;
        const bool edge = (y > 0 && gp[(y - 1) * W + x] != me) ||
                          (y + 1 < H && gp[(y + 1) * W + x] != me) ||
                          (x > 0 && gp[y * W + x - 1] != me) ||
                          (x + 1 < W && gp[y * W + x + 1] != me);
        if (edge) val += w0;
        wp[y * W + x] = val;
      }
  }
  return w;
}

Tensor wbce(const Tensor& logits, const Tensor& gt, const Tensor& weights,
            double prob_clamp) {
  if (logits.shape() != gt.shape() || logits.shape() != weights.shape())
    throw ShapeError("wbce shape mismatch: logits " + shape_str(logits.shape()) +
                     ", gt " + shape_str(gt.shape()) + ", weights " +
                     shape_str(weights.shape()));
  Tensor p = clamp(sigmoid(logits), prob_clamp, 1.0 - prob_clamp);
  Tensor pos = mul(gt, log(p));
  Tensor neg = mul(add_scalar(scale(gt, -1.0), 1.0),
                   log(add_scalar(scale(p, -1.0), 1.0)));
  Tensor weighted = mul(weights, add(pos, neg));
  return scale(mean_all(weighted), -1.0);
}

Tensor ssim_loss(const Tensor& prob, const Tensor& gt, int patch, double eps) {
  if (prob.shape() != gt.shape())
    throw ShapeError("ssim_loss shape mismatch");
  if (prob.rank() != 4 || prob.dim(1) != 1)
    throw ShapeError("ssim_loss expects [N,1,H,W] maps");
  if (patch < 1 || patch % 2 == 0) throw ShapeError("ssim patch must be odd");
  if (prob.dim(2) < patch || prob.dim(3) < patch)
    throw ShapeError("ssim_loss map smaller than the patch size");
  // Uniform patch statistics via stride-1 valid convolution.
  Tensor kernel({1, 1, patch, patch},
                1.0 / (static_cast<double>(patch) * static_cast<double>(patch)));
  Tensor none;
  auto patch_mean = [&](const Tensor& t) { return conv2d(t, kernel, none); };
  Tensor mx = patch_mean(prob);
  Tensor my = patch_mean(gt);
  Tensor mxx = patch_mean(mul(prob, prob));
  Tensor myy = patch_mean(mul(gt, gt));
  Tensor mxy = patch_mean(mul(prob, gt));
  Tensor vx = sub(mxx, mul(mx, mx));
  Tensor vy = sub(myy, mul(my, my));
  Tensor cov = sub(mxy, mul(mx, my));
  Tensor num = mul(add_scalar(scale(mul(mx, my), 2.0), eps),
                   add_scalar(scale(cov, 2.0), eps));
  Tensor den = mul(add_scalar(add(mul(mx, mx), mul(my, my)), eps),
                   add_scalar(add(vx, vy), eps));
  Tensor ssim = div(num, den);
  return add_scalar(scale(mean_all(ssim), -1.0), 1.0);
}

Tensor siou_loss(const Tensor& prob, const Tensor& gt) {
  if (prob.shape() != gt.shape()) throw ShapeError("siou_loss shape mismatch");
  Tensor inter = sum_all(mul(prob, gt));
  Tensor uni = sum_all(sub(add(prob, gt), mul(prob, gt)));
  Tensor ratio = div(inter, add_scalar(uni, 1e-8));
  return add_scalar(scale(ratio, -1.0), 1.0);
}

Tensor hybrid_loss(const SideOutputs& outputs, const Tensor& gt,
                   const LossConfig& cfg, LossBreakdown* breakdown) {
  cfg.validate();
  Tensor weights = compute_weights(gt, cfg.boundary_weight);
  auto one = [&](const Tensor& logits, LossTerms* terms) {
    Tensor lw = wbce(logits, gt, weights, cfg.prob_clamp);
    Tensor prob = sigmoid(logits);
    Tensor ls = ssim_loss(prob, gt, cfg.ssim_patch, cfg.ssim_eps);
    Tensor li = siou_loss(prob, gt);
    if (terms) {
      terms->wbce = lw.item();
      terms->ssim = ls.item();
      terms->siou = li.item();
    }
    return add(add(lw, ls), li);
  };
  Tensor total = one(outputs.fused, breakdown ? &breakdown->fused : nullptr);
  for (size_t s = 0; s < 5; ++s) {
    Tensor term = one(outputs.side[s], breakdown ? &breakdown->side[s] : nullptr);
    if (cfg.alpha[s] != 0.0)
      total = add(total, scale(term, cfg.alpha[s]));
  }
  if (breakdown) breakdown->total = total.item();
  return total;
}

}  // namespace cdnet
