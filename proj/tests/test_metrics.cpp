#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "cdnet/metrics.hpp"
#include "cdnet/rng.hpp"
#include "doctest.h"

using namespace cdnet;

namespace {

Tensor rand_mask(Rng& rng, Shape shape, double p1 = 0.5) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform() < p1 ? 1.0 : 0.0;
  return t;
}

// Deliberately naive pixel enumeration, kept independent of the library.
struct NaiveCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

NaiveCounts naive_confusion(const Tensor& pred, const Tensor& gt) {
  NaiveCounts c;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] == 1.0, g = gt[i] == 1.0;
    if (p && g) ++c.tp;
    if (p && !g) ++c.fp;
    if (!p && !g) ++c.tn;
    if (!p && g) ++c.fn;
  }
  return c;
}

// Band membership by direct Chebyshev-distance scan over every boundary
// pixel (4-neighbor label transitions in the reference mask).
double naive_mba(const Tensor& pred, const Tensor& gt, int64_t H, int64_t W,
                 const std::vector<int>& radii) {
  std::vector<std::pair<int64_t, int64_t>> bnd;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const double me = gt[y * W + x];
      if ((y > 0 && gt[(y - 1) * W + x] != me) ||
          (y + 1 < H && gt[(y + 1) * W + x] != me) ||
          (x > 0 && gt[y * W + x - 1] != me) ||
          (x + 1 < W && gt[y * W + x + 1] != me))
        bnd.emplace_back(y, x);
    }
  if (bnd.empty()) {
    int64_t ok = 0;
    for (int64_t i = 0; i < H * W; ++i) ok += pred[i] == gt[i];
    return static_cast<double>(ok) / static_cast<double>(H * W);
  }
  double acc = 0.0;
  for (int r : radii) {
    int64_t in_band = 0, correct = 0;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        bool member = false;
        for (const auto& [by, bx] : bnd)
          if (std::max(std::llabs(y - by), std::llabs(x - bx)) <= r) {
            member = true;
            break;
          }
        if (!member) continue;
        ++in_band;
        if (pred[y * W + x] == gt[y * W + x]) ++correct;
      }
    acc += static_cast<double>(correct) / static_cast<double>(in_band);
  }
  return acc / static_cast<double>(radii.size());
}

}  // namespace

TEST_CASE("ratio formulas agree with hand arithmetic") {
  ConfusionCounts c{8, 2, 88, 2};
  CHECK(precision(c) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(recall(c) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(f1_score(c) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(iou_score(c) == doctest::Approx(8.0 / 12.0).epsilon(1e-15));
  CHECK(overall_accuracy(c) == doctest::Approx(0.96).epsilon(1e-15));

  // Perfect prediction with both classes present.
  ConfusionCounts perfect{10, 0, 90, 0};
  CHECK(precision(perfect) == 1.0);
  CHECK(recall(perfect) == 1.0);
  CHECK(f1_score(perfect) == 1.0);
  CHECK(iou_score(perfect) == 1.0);
  CHECK(overall_accuracy(perfect) == 1.0);

  // Empty-positive conventions report zero, never NaN.
  ConfusionCounts none{0, 0, 100, 4};
  CHECK(precision(none) == 0.0);
  CHECK(recall(none) == 0.0);
  CHECK(f1_score(none) == 0.0);
  CHECK(iou_score(none) == 0.0);
}

TEST_CASE("confusion counting matches naive enumeration on random masks") {
  Rng rng(211);
  for (int it = 0; it < 100; ++it) {
    Tensor pred = rand_mask(rng, {32, 32}, rng.uniform(0.1, 0.9));
    Tensor gt = rand_mask(rng, {32, 32}, rng.uniform(0.1, 0.9));
    ConfusionCounts c = confusion(pred, gt);
    NaiveCounts n = naive_confusion(pred, gt);
    CHECK(c.tp == n.tp);
    CHECK(c.fp == n.fp);
    CHECK(c.tn == n.tn);
    CHECK(c.fn == n.fn);
    CHECK(c.total() == 32 * 32);

    // The harmonic identity ties the two overlap scores together.
    const double f1 = f1_score(c), iou = iou_score(c);
    CHECK(std::abs(f1 - 2.0 * iou / (1.0 + iou)) <= 1e-12);
    CHECK(iou <= f1 + 1e-15);
  }

  CHECK_THROWS_AS(confusion(rand_mask(rng, {4, 4}), rand_mask(rng, {5, 5})),
                  ShapeError);
  CHECK_THROWS_AS(confusion(Tensor({2, 2}, 0.5), rand_mask(rng, {2, 2})),
                  ShapeError);
}

TEST_CASE("threshold sweeps match per-threshold brute force") {
  Rng rng(223);
  Tensor prob({10}, 0.0);
  for (auto& v : prob.data()) v = rng.uniform();
  Tensor gt = rand_mask(rng, {10});
  gt[0] = 1.0;  // pin one pixel of each class so the endpoints are (1,1)
  gt[1] = 0.0;

  std::vector<double> ts = default_thresholds();
  REQUIRE(ts.size() == 101);
  CHECK(ts.front() == 1.0);
  CHECK(ts.back() == 0.0);

  auto roc = roc_curve(prob, gt, ts);
  REQUIRE(roc.size() == ts.size());
  int64_t pos = 0, neg = 0;
  for (double v : gt.data()) (v == 1.0 ? pos : neg) += 1;
  for (size_t i = 0; i < ts.size(); ++i) {
    int64_t tp = 0, fp = 0;
    for (int64_t j = 0; j < 10; ++j)
      if (prob[j] >= ts[i]) (gt[j] == 1.0 ? tp : fp) += 1;
    const double tpr = pos ? static_cast<double>(tp) / pos : 0.0;
    const double fpr = neg ? static_cast<double>(fp) / neg : 0.0;
    CHECK(roc[i].first == doctest::Approx(fpr).epsilon(1e-15));
    CHECK(roc[i].second == doctest::Approx(tpr).epsilon(1e-15));
  }

  // Monotone in both coordinates as the threshold descends.
  for (size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].first >= roc[i - 1].first);
    CHECK(roc[i].second >= roc[i - 1].second);
  }

  // Endpoints: everything positive at zero, nothing above one.
  CHECK(roc.back().first == 1.0);
  CHECK(roc.back().second == 1.0);
  auto high = roc_curve(prob, gt, {1.5});
  CHECK(high[0].first == 0.0);
  CHECK(high[0].second == 0.0);
}

TEST_CASE("boundary-band accuracy agrees with the direct-scan oracle") {
  Rng rng(227);

  // Half-plane reference with the prediction shifted one column.
  Tensor gt = Tensor::zeros({8, 8});
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 4; x < 8; ++x) gt[y * 8 + x] = 1.0;
  Tensor pred = Tensor::zeros({8, 8});
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 5; x < 8; ++x) pred[y * 8 + x] = 1.0;
  const std::vector<int> radii{1, 3, 5, 7};
  CHECK(std::abs(mba(pred, gt, radii) - naive_mba(pred, gt, 8, 8, radii)) <=
        1e-12);

  // The shifted half-plane has a closed form: band of radius r spans
  // columns [3-r, 4+r] (clipped), and exactly one column (x=4) disagrees.
  {
    double want = 0.0;
    for (int r : radii) {
      const int64_t lo = std::max<int64_t>(0, 3 - r);
      const int64_t hi = std::min<int64_t>(7, 4 + r);
      const double cols = static_cast<double>(hi - lo + 1);
      want += (cols - 1.0) / cols;
    }
    want /= static_cast<double>(radii.size());
    CHECK(std::abs(mba(pred, gt, radii) - want) <= 1e-12);
  }

  // Random fuzz against the oracle.
  for (int it = 0; it < 20; ++it) {
    Tensor g = rand_mask(rng, {12, 12}, rng.uniform(0.2, 0.8));
    Tensor p = rand_mask(rng, {12, 12}, rng.uniform(0.2, 0.8));
    CHECK(std::abs(mba(p, g, radii) - naive_mba(p, g, 12, 12, radii)) <= 1e-12);
  }
}

TEST_CASE("boundary-band accuracy keeps its symmetries and edge cases") {
  Rng rng(229);
  Tensor gt = rand_mask(rng, {10, 10});
  Tensor pred = rand_mask(rng, {10, 10});

  CHECK(mba(gt, gt) == 1.0);

  Tensor np(pred.shape(), 0.0), ng(gt.shape(), 0.0);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    np[i] = 1.0 - pred[i];
    ng[i] = 1.0 - gt[i];
  }
  CHECK(std::abs(mba(pred, gt) - mba(np, ng)) <= 1e-15);

  // Complement prediction scores zero within the bands.
  CHECK(mba(ng, gt) == 0.0);

  // A single-class reference degenerates to overall accuracy.
  Tensor flat = Tensor::zeros({6, 6});
  Tensor guess = rand_mask(rng, {6, 6});
  ConfusionCounts c = confusion(guess, flat);
  CHECK(std::abs(mba(guess, flat) - overall_accuracy(c)) <= 1e-15);
}

TEST_CASE("report assembly copies every derived ratio") {
  ConfusionCounts c{30, 10, 50, 10};
  MetricsReport r = report_from_counts(c);
  CHECK(r.counts.tp == 30);
  CHECK(r.precision == precision(c));
  CHECK(r.recall == recall(c));
  CHECK(r.f1 == f1_score(c));
  CHECK(r.iou == iou_score(c));
  CHECK(r.oa == overall_accuracy(c));
}
