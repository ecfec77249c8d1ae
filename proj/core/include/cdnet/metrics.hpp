#pragma once

#include <utility>
#include <vector>

#include "cdnet/tensor.hpp"

namespace cdnet {

// Pixel-level confusion counts with the change class as positive.
struct ConfusionCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

// Ratios derived from counts. Undefined ratios (zero denominators) report 0
// so serialized outputs stay stable.
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1_score(const ConfusionCounts& c);
double iou_score(const ConfusionCounts& c);
double overall_accuracy(const ConfusionCounts& c);

struct MetricsReport {
  ConfusionCounts counts;
  double precision = 0.0, recall = 0.0, f1 = 0.0, iou = 0.0, oa = 0.0;
  std::vector<std::pair<double, double>> roc;  // (fpr, tpr), descending threshold
  double mba = 0.0;
};

MetricsReport report_from_counts(const ConfusionCounts& c);

// Masks are tensors of {0,1} values with identical shapes (any rank).
ConfusionCounts confusion(const Tensor& pred, const Tensor& gt);

// Evenly spaced thresholds from hi down to lo inclusive (default 1.00..0.00
// in steps of 0.01, 101 points).
std::vector<double> default_thresholds(int points = 101, double hi = 1.0,
                                       double lo = 0.0);

// Per threshold t: predict prob >= t, emit (FPR, TPR). FPR (TPR) is 0 when
// no negatives (positives) exist.
std::vector<std::pair<double, double>> roc_curve(
    const Tensor& prob, const Tensor& gt,
    const std::vector<double>& thresholds);

// Mean boundary accuracy: for each radius, accuracy restricted to pixels
// within Chebyshev distance r of a ground-truth boundary pixel (boundary =
// 4-neighbor label transition), averaged over radii. A mask with no
// boundary (single-class gt) degenerates to overall accuracy.
double mba(const Tensor& pred, const Tensor& gt,
           const std::vector<int>& radii = {1, 3, 5, 7});

}  // namespace cdnet
