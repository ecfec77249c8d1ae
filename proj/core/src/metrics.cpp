#include "cdnet/metrics.hpp"

#include <algorithm>

namespace cdnet {

namespace {

void check_mask_pair(const Tensor& a, const Tensor& b, bool binary_a = true) {
  if (a.shape() != b.shape())
    throw ShapeError("mask shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (binary_a)
    for (double v : a.data())
      if (v != 0.0 && v != 1.0) throw ShapeError("mask values must be 0 or 1");
  for (double v : b.data())
    if (v != 0.0 && v != 1.0) throw ShapeError("mask values must be 0 or 1");
}

// (h, w) of the trailing two axes; leading axes are treated as independent
// planes for boundary operations.
std::pair<int64_t, int64_t> plane_dims(const Tensor& t) {
  if (t.rank() < 2) throw ShapeError("mask rank must be >= 2");
  return {t.dim(-2), t.dim(-1)};
}

}  // namespace

double precision(const ConfusionCounts& c) {
  const int64_t d = c.tp + c.fp;
  return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double recall(const ConfusionCounts& c) {
  const int64_t d = c.tp + c.fn;
  return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double f1_score(const ConfusionCounts& c) {
  const double p = precision(c), r = recall(c);
  return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double iou_score(const ConfusionCounts& c) {
  const int64_t d = c.tp + c.fp + c.fn;
  return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double overall_accuracy(const ConfusionCounts& c) {
  const int64_t d = c.total();
  return d == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(d);
}

MetricsReport report_from_counts(const ConfusionCounts& c) {
  MetricsReport r;
  r.counts = c;
  r.precision = precision(c);
  r.recall = recall(c);
  r.f1 = f1_score(c);
  r.iou = iou_score(c);
  r.oa = overall_accuracy(c);
  return r;
}

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt) {
  check_mask_pair(pred, gt);
  ConfusionCounts c;
  const auto& p = pred.data();
  const auto& g = gt.data();
  for (size_t i = 0; i < p.size(); ++i) {
    if (g[i] == 1.0)
      (p[i] == 1.0 ? c.tp : c.fn) += 1;
    else
      (p[i] == 1.0 ? c.fp : c.tn) += 1;
  }
  return c;
}

std::vector<double> default_thresholds(int points, double hi, double lo) {
  if (points < 2) throw ShapeError("threshold grid needs at least 2 points");
  std::vector<double> t(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i)
    t[static_cast<size_t>(i)] =
        hi + (lo - hi) * static_cast<double>(i) / static_cast<double>(points - 1);
  return t;
}

std::vector<std::pair<double, double>> roc_curve(
    const Tensor& prob, const Tensor& gt,
    const std::vector<double>& thresholds) {
  check_mask_pair(prob, gt, /*binary_a=*/false);
  const auto& p = prob.data();
  const auto& g = gt.data();
  int64_t pos = 0, neg = 0;
  for (double v : g) (v == 1.0 ? pos : neg) += 1;
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      if (p[i] >= t)
        (g[i] == 1.0 ? tp : fp) += 1;
    }
    const double tpr = pos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pos);
    const double fpr = neg == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(neg);
    out.emplace_back(fpr, tpr);
  }
  return out;
}

double mba(const Tensor& pred, const Tensor& gt, const std::vector<int>& radii) {
  check_mask_pair(pred, gt);
  if (radii.empty()) throw ShapeError("mba requires at least one radius");
  auto [H, W] = plane_dims(gt);
  const int64_t planes = gt.numel() / (H * W);
  const auto& p = pred.data();
  const auto& g = gt.data();

  // Boundary pixels per plane (4-neighbor label transition).
  std::vector<uint8_t> boundary(static_cast<size_t>(gt.numel()), 0);
  bool any_boundary = false;
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* gp = g.data() + pl * H * W;
    uint8_t* bp = boundary.data() + pl * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const double me = gp[y * W + x];
        const bool edge = (y > 0 && gp[(y - 1) * W + x] != me) ||
                          (y + 1 < H && gp[(y + 1) * W + x] != me) ||
                          (x > 0 && gp[y * W + x - 1] != me) ||
                          (x + 1 < W && gp[y * W + x + 1] != me);
        if (edge) {
          bp[y * W + x] = 1;
          any_boundary = true;
        }
      }
  }
  if (!any_boundary) {
    ConfusionCounts c = confusion(pred, gt);
    return overall_accuracy(c);
  }

  // Iterated 8-neighbor dilation: after r rounds a pixel is marked iff its
  // Chebyshev distance to some boundary pixel is <= r.
  std::vector<uint8_t> band = boundary;
  auto dilate = [&](std::vector<uint8_t>& m) {
    std::vector<uint8_t> nx = m;
    for (int64_t pl = 0; pl < planes; ++pl) {
      const uint8_t* src = m.data() + pl * H * W;
      uint8_t* dst = nx.data() + pl * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          if (dst[y * W + x]) continue;
          for (int64_t dy = -1; dy <= 1 && !dst[y * W + x]; ++dy)
            for (int64_t dx = -1; dx <= 1; ++dx) {
              const int64_t yy = y + dy, xx = x + dx;
              if (yy >= 0 && yy < H && xx >= 0 && xx < W && src[yy * W + xx]) {
                dst[y * W + x] = 1;
                break;
              }
            }
        }
    }
    m.swap(nx);
  };

  std::vector<int> sorted = radii;
  std::sort(sorted.begin(), sorted.end());
  double acc_sum = 0.0;
  int rounds = 0;
  for (int r : sorted) {
    if (r < 0) throw ShapeError("mba radius must be nonnegative");
    while (rounds < r) {
      dilate(band);
      ++rounds;
    }
    int64_t in_band = 0, correct = 0;
    for (size_t i = 0; i < band.size(); ++i) {
      if (band[i]) {
        ++in_band;
        if (p[i] == g[i]) ++correct;
      }
    }
    acc_sum += static_cast<double>(correct) / static_cast<double>(in_band);
  }
  return acc_sum / static_cast<double>(sorted.size());
}

}  // namespace cdnet
