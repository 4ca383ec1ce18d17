#include <cmath>

#include "doctest.h"
#include "grounder/gradcheck.hpp"
#include "grounder/losses.hpp"
#include "grounder/random.hpp"

using namespace grounder;

namespace {

// Independent exact rectangle arithmetic, deliberately written from the
// corner representation rather than reusing the library path.
double oracle_giou_exact(const BoundingBox& a, const BoundingBox& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = ix * iy;
  const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  const double hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) *
                      (std::max(ay2, by2) - std::min(ay1, by1));
  if (uni <= 0 || hull <= 0) return 0.0;
  return inter / uni - (hull - uni) / hull;
}

// Rasterization oracle: count cell centers of a fine grid inside each box.
double oracle_giou_raster(const BoundingBox& a, const BoundingBox& b, int cells,
                          double domain_lo, double domain_hi) {
  const double step = (domain_hi - domain_lo) / cells;
  auto inside = [&](const BoundingBox& box, double x, double y) {
    return x >= box.cx - box.w / 2 && x <= box.cx + box.w / 2 && y >= box.cy - box.h / 2 &&
           y <= box.cy + box.h / 2;
  };
  const double hx1 = std::min(a.cx - a.w / 2, b.cx - b.w / 2);
  const double hx2 = std::max(a.cx + a.w / 2, b.cx + b.w / 2);
  const double hy1 = std::min(a.cy - a.h / 2, b.cy - b.h / 2);
  const double hy2 = std::max(a.cy + a.h / 2, b.cy + b.h / 2);
  int64_t in_a = 0, in_b = 0, in_both = 0, in_hull = 0;
  for (int r = 0; r < cells; ++r) {
    const double y = domain_lo + (r + 0.5) * step;
    for (int c = 0; c < cells; ++c) {
      const double x = domain_lo + (c + 0.5) * step;
      const bool pa = inside(a, x, y);
      const bool pb = inside(b, x, y);
      in_a += pa;
      in_b += pb;
      in_both += pa && pb;
      in_hull += x >= hx1 && x <= hx2 && y >= hy1 && y <= hy2;
    }
  }
  const double uni = static_cast<double>(in_a + in_b - in_both);
  if (uni <= 0 || in_hull <= 0) return 0.0;
  return static_cast<double>(in_both) / uni - (in_hull - uni) / static_cast<double>(in_hull);
}

BoundingBox random_box(RandomSource& rng) {
  const double w = rng.uniform(0.05, 0.6);
  const double h = rng.uniform(0.05, 0.6);
  return {rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
}

}  // namespace

TEST_CASE("ce loss examples") {
  // Saturated true class: probability ~1, loss ~0.
  Tensor32 sure(Shape{3}, {50.0f, 0.0f, 0.0f});
  CHECK(ce_loss(sure, 0).item() == doctest::Approx(0.0).epsilon(1e-6));

  // Uniform logits over two classes: (1/2) ln 2.
  Tensor32 uniform(Shape{2}, {0.0f, 0.0f});
  CHECK(ce_loss(uniform, 0).item() == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-6));

  CHECK_THROWS_AS(ce_loss(Tensor32(Shape{1}), 0), ContractError);
  CHECK_THROWS_AS(ce_loss(uniform, 2), ContractError);
}

TEST_CASE("ce loss is non-negative on random logits (direct-formula oracle)") {
  RandomSource rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int nc = rng.uniform_int(2, 7);
    Tensor64 logits(Shape{nc});
    for (int i = 0; i < nc; ++i) logits.data()[i] = rng.uniform(-20, 20);
    const int label = rng.uniform_int(0, nc - 1);
    const double loss = ce_loss(logits, label).item();
    CHECK(loss >= 0.0);
    // Direct formula recomputation.
    double denom = 0, mx = -1e30;
    for (int i = 0; i < nc; ++i) mx = std::max(mx, logits.data()[i]);
    for (int i = 0; i < nc; ++i) denom += std::exp(logits.data()[i] - mx);
    const double p = std::exp(logits.data()[label] - mx) / denom;
    const double expected = -std::log(std::max(p, 1e-12)) / nc;
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("weighted bce examples") {
  // Saturated perfect prediction.
  Tensor32 sat(Shape{2}, {60.0f, -60.0f});
  CHECK(weighted_bce_loss(sat, {1, 0}).item() == doctest::Approx(0.0).epsilon(1e-6));

  // Zero logits, one positive and one negative: ln2 + ln2.
  Tensor32 zero2(Shape{2});
  CHECK(weighted_bce_loss(zero2, {1, 0}).item() ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));

  // All-negative labels: the positive term is omitted, leaving ln2.
  CHECK(weighted_bce_loss(zero2, {0, 0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  // Symmetric omission: all-positive labels.
  CHECK(weighted_bce_loss(zero2, {1, 1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("ce and bce are permutation-covariant") {
  RandomSource rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 6;
    std::vector<double> vals(n);
    std::vector<uint8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      vals[static_cast<size_t>(i)] = rng.uniform(-3, 3);
      labels[static_cast<size_t>(i)] = rng.bernoulli(0.4);
    }
    std::vector<int> perm = {3, 1, 5, 0, 4, 2};
    std::vector<double> pvals(n);
    std::vector<uint8_t> plabels(n);
    for (int i = 0; i < n; ++i) {
      pvals[static_cast<size_t>(i)] = vals[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      plabels[static_cast<size_t>(i)] = labels[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    Tensor64 logits(Shape{n}, vals);
    Tensor64 plogits(Shape{n}, pvals);
    CHECK(weighted_bce_loss(logits, labels).item() ==
          doctest::Approx(weighted_bce_loss(plogits, plabels).item()).epsilon(1e-9));

    const int label = rng.uniform_int(0, n - 1);
    int plabel = 0;
    for (int i = 0; i < n; ++i) {
      if (perm[static_cast<size_t>(i)] == label) plabel = i;
    }
    CHECK(ce_loss(logits, label).item() ==
          doctest::Approx(ce_loss(plogits, plabel).item()).epsilon(1e-9));
  }
}

TEST_CASE("l1 box loss examples") {
  BoundingBox b{0.5, 0.5, 0.4, 0.4};
  Tensor32 same(Shape{4}, {0.5f, 0.5f, 0.4f, 0.4f});
  CHECK(l1_box_loss(same, b).item() == doctest::Approx(0.0));

  Tensor32 moved(Shape{4}, {0.6f, 0.5f, 0.4f, 0.4f});
  CHECK(l1_box_loss(moved, b).item() == doctest::Approx(0.1).epsilon(1e-5));

  RandomSource rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    BoundingBox x = random_box(rng), y = random_box(rng);
    Tensor64 tx(Shape{4}, {x.cx, x.cy, x.w, x.h});
    Tensor64 ty(Shape{4}, {y.cx, y.cy, y.w, y.h});
    CHECK(l1_box_loss(tx, y).item() == doctest::Approx(l1_box_loss(ty, x).item()).epsilon(1e-12));
  }
}

TEST_CASE("giou identities and the disjoint-corner case") {
  BoundingBox a{0.5, 0.5, 0.2, 0.3};
  CHECK(giou(a, a).value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(giou(a, a).degenerate == false);

  // Corners a=(0,0,1,1), b=(2,2,3,3): IoU 0, union 2, hull 9 -> -7/9.
  BoundingBox box_a = from_corners({0, 0, 1, 1});
  BoundingBox box_b = from_corners({2, 2, 3, 3});
  CHECK(giou(box_a, box_b).value == doctest::Approx(-7.0 / 9).epsilon(1e-6));

  // Corners a=(0,0,2,2), b=(1,1,2,2): IoU 0.25 and hull == union, so
  // GIoU == IoU.
  BoundingBox c = from_corners({0, 0, 2, 2});
  BoundingBox d = from_corners({1, 1, 2, 2});
  CHECK(iou(c, d) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(giou(c, d).value == doctest::Approx(0.25).epsilon(1e-6));

  BoundingBox degen{0.5, 0.5, 0, 0};
  auto g = giou(degen, degen);
  CHECK(g.degenerate);
  CHECK(g.value == 0.0);
}

TEST_CASE("giou matches the exact and rasterization oracles") {
  RandomSource rng(41);
  int disjoint = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const BoundingBox a = random_box(rng);
    const BoundingBox b = random_box(rng);
    const double v = giou(a, b).value;
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(oracle_giou_exact(a, b)).epsilon(1e-6));
    if (iou(a, b) == 0.0) ++disjoint;
  }
  CHECK(disjoint > 100);  // the sweep covers disjoint pairs

  // The rasterization oracle is coarser; run it on a subset at 512x512.
  for (int trial = 0; trial < 60; ++trial) {
    const BoundingBox a = random_box(rng);
    const BoundingBox b = random_box(rng);
    const double v = giou(a, b).value;
    const double o = oracle_giou_raster(a, b, 512, 0.0, 1.0);
    CHECK(std::abs(v - o) < 1e-2);
  }
}

TEST_CASE("giou == iou whenever hull equals union") {
  // Identical boxes and nested boxes both have hull == union.
  RandomSource rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    BoundingBox outer = random_box(rng);
    BoundingBox inner{outer.cx, outer.cy, outer.w / 2, outer.h / 2};
    CHECK(giou(outer, inner).value == doctest::Approx(iou(outer, inner)).epsilon(1e-9));
  }
}

TEST_CASE("translating disjoint boxes apart strictly decreases giou") {
  BoundingBox a{0.2, 0.5, 0.1, 0.1};
  double prev = 1.0;
  for (int k = 0; k < 20; ++k) {
    BoundingBox b{0.35 + 0.03 * k, 0.5, 0.1, 0.1};
    const double v = giou(a, b).value;
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("differentiable giou loss agrees with geometry and passes grad check") {
  RandomSource rng(47);
  for (int trial = 0; trial < 200; ++trial) {
    const BoundingBox a = random_box(rng);
    const BoundingBox b = random_box(rng);
    Tensor64 pred(Shape{4}, {a.cx, a.cy, a.w, a.h});
    const double loss = giou_box_loss(pred, b).item();
    CHECK(loss == doctest::Approx(1.0 - giou(a, b).value).epsilon(1e-6));
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);
  }
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    RandomSource r2(seed);
    const BoundingBox gt = random_box(r2);
    const BoundingBox start = random_box(r2);
    Tensor64 pred(Shape{4}, {start.cx, start.cy, start.w, start.h});
    CHECK(grad_check([&](const Tensor64& t) { return giou_box_loss(t, gt); }, pred) < 1e-4);
    Tensor64 pred2(Shape{4}, {start.cx + 0.013, start.cy - 0.007, start.w, start.h});
    CHECK(grad_check([&](const Tensor64& t) { return l1_box_loss(t, gt); }, pred2) < 1e-4);
  }
}

TEST_CASE("loss gradients for ce and bce") {
  RandomSource rng(53);
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const int nc = 5;
    Tensor64 logits(Shape{nc});
    for (int i = 0; i < nc; ++i) logits.data()[i] = rng.uniform(-2, 2);
    const int label = rng.uniform_int(0, nc - 1);
    CHECK(grad_check([&](const Tensor64& t) { return ce_loss(t, label); }, logits) < 1e-4);

    Tensor64 alogits(Shape{8});
    std::vector<uint8_t> y(8);
    for (int i = 0; i < 8; ++i) {
      alogits.data()[i] = rng.uniform(-2, 2);
      y[static_cast<size_t>(i)] = rng.bernoulli(0.3);
    }
    CHECK(grad_check([&](const Tensor64& t) { return weighted_bce_loss(t, y); }, alogits) < 1e-4);
  }
}

TEST_CASE("total loss composition and ablation switches") {
  // Components (1.0, 0.1, 0.2, 0.5) with weights (1, 10, 5, 2) sum to 4.0.
  CHECK(1.0 + 10 * 0.1 + 5 * 0.2 + 2 * 0.5 == doctest::Approx(4.0));

  RandomSource rng(59);
  for (int trial = 0; trial < 100; ++trial) {
    const int nc = 4, na = 8;
    Tensor64 cat(Shape{nc});
    Tensor64 attr(Shape{na});
    for (int i = 0; i < nc; ++i) cat.data()[i] = rng.uniform(-3, 3);
    for (int i = 0; i < na; ++i) attr.data()[i] = rng.uniform(-3, 3);
    TargetLabels target;
    target.category = rng.uniform_int(0, nc - 1);
    target.attributes.resize(na);
    for (int i = 0; i < na; ++i) target.attributes[static_cast<size_t>(i)] = rng.bernoulli(0.3);
    target.box = random_box(rng);
    const BoundingBox p = random_box(rng);
    Tensor64 box(Shape{4}, {p.cx, p.cy, p.w, p.h});

    const auto breakdown = total_loss(cat, attr, box, target);
    const double expected = breakdown.ce + 10 * breakdown.bce + 5 * breakdown.l1 +
                            2 * breakdown.giou;
    CHECK(breakdown.total.item() == doctest::Approx(expected).epsilon(1e-7));

    // All four terms are non-negative (giou loss bounded by 2).
    CHECK(breakdown.ce >= 0);
    CHECK(breakdown.bce >= 0);
    CHECK(breakdown.l1 >= 0);
    CHECK(breakdown.giou >= 0);
    CHECK(breakdown.giou <= 2);

    // Disabling ce and bce leaves 5*l1 + 2*giou.
    LossToggles t;
    t.ce = false;
    t.bce = false;
    const auto reduced = total_loss(cat, attr, box, target, LossWeights{}, t);
    CHECK(reduced.total.item() ==
          doctest::Approx(5 * breakdown.l1 + 2 * breakdown.giou).epsilon(1e-7));
  }

  // Zero components give zero loss: perfect prediction everywhere.
  TargetLabels target;
  target.category = 0;
  target.attributes = {1, 0};
  target.box = {0.5, 0.5, 0.2, 0.2};
  Tensor64 cat(Shape{2}, {80.0, -80.0});
  Tensor64 attr(Shape{2}, {80.0, -80.0});
  Tensor64 box(Shape{4}, {0.5, 0.5, 0.2, 0.2});
  CHECK(total_loss(cat, attr, box, target).total.item() == doctest::Approx(0.0).epsilon(1e-6));

  // Negative weights are rejected.
  LossWeights bad;
  bad.l1 = -1;
  CHECK_THROWS_AS(total_loss(cat, attr, box, target, bad), ContractError);
}

TEST_CASE("loss-input fuzz: no NaN anywhere") {
  RandomSource rng(61);
  for (int trial = 0; trial < 10000; ++trial) {
    const int nc = 4, na = 8;
    Tensor32 cat(Shape{nc});
    Tensor32 attr(Shape{na});
    for (int i = 0; i < nc; ++i) cat.data()[i] = static_cast<float>(rng.uniform(-60, 60));
    for (int i = 0; i < na; ++i) attr.data()[i] = static_cast<float>(rng.uniform(-60, 60));
    TargetLabels target;
    target.category = rng.uniform_int(0, nc - 1);
    target.attributes.resize(na);
    for (int i = 0; i < na; ++i) target.attributes[static_cast<size_t>(i)] = rng.bernoulli(0.2);
    target.box = random_box(rng);
    BoundingBox p = random_box(rng);
    if (rng.bernoulli(0.05)) p.w = 0;  // degenerate predictions included
    if (rng.bernoulli(0.05)) p.h = 0;
    Tensor32 box(Shape{4}, {static_cast<float>(p.cx), static_cast<float>(p.cy),
                            static_cast<float>(p.w), static_cast<float>(p.h)});
    const auto breakdown = total_loss(cat, attr, box, target);
    CHECK(std::isfinite(breakdown.total.item()));
  }
}
