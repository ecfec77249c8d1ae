#pragma once

#include <array>

#include "cdnet/network.hpp"
#include "cdnet/tensor.hpp"

namespace cdnet {

struct LossConfig {
  double boundary_weight = 2.0;        // w0, extra weight on label transitions
  int ssim_patch = 11;                 // N, sliding-window side
  double ssim_eps = 1e-4;
  std::array<double, 5> alpha = {1.0, 1.0, 1.0, 1.0, 1.0};  // side-output weights
  double prob_clamp = 1e-7;            // sigmoid output clamp for log safety
  void validate() const;
};

// Per-pixel weights over a batch of binary masks [N,1,H,W]:
//   w(x) = median(f)/f_{class(x)} + w0 * boundary(x)
// where f holds the two class frequencies pooled over the whole batch (the
// median of two entries is their mean), a single-class batch weights the
// present class 1, and boundary(x) = 1 iff some 4-neighbor differs.
// The result carries no gradient.
Tensor compute_weights(const Tensor& gt, double w0);

// -mean_x w(x) * [g log p + (1-g) log(1-p)] with p = clamp(sigmoid(logits)).
Tensor wbce(const Tensor& logits, const Tensor& gt, const Tensor& weights,
            double prob_clamp = 1e-7);

// 1 - mean over interior N x N patches (stride 1) of
//   (2 mx my + eps)(2 cov + eps) / ((mx^2 + my^2 + eps)(vx + vy + eps)).
Tensor ssim_loss(const Tensor& prob, const Tensor& gt, int patch = 11,
                 double eps = 1e-4);

// 1 - sum(p g) / (sum(p + g - p g) + 1e-8).
Tensor siou_loss(const Tensor& prob, const Tensor& gt);

struct LossTerms {
  double wbce = 0.0, ssim = 0.0, siou = 0.0;
  double total() const { return wbce + ssim + siou; }
};

struct LossBreakdown {
  LossTerms fused;
  std::array<LossTerms, 5> side;
  double total = 0.0;
};

// Hybrid objective: L(P^fused) + sum_s alpha_s L(P^s), where each
// L = wbce + ssim_loss + siou_loss and the weight map is shared.
Tensor hybrid_loss(const SideOutputs& outputs, const Tensor& gt,
                   const LossConfig& cfg, LossBreakdown* breakdown = nullptr);

}  // namespace cdnet
