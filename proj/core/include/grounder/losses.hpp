#pragma once

#include <vector>

#include "grounder/geometry.hpp"
#include "grounder/ops.hpp"

namespace grounder {

// Coefficients of the combined objective; the cross-entropy term is fixed
// at 1 and the others default to 10 / 5 / 2.
struct LossWeights {
  double bce = 10.0;
  double l1 = 5.0;
  double giou = 2.0;
};

// Ablation switches; any subset of the auxiliary terms can be disabled.
struct LossToggles {
  bool ce = true;
  bool bce = true;
  bool l1 = true;
  bool giou = true;
};

namespace loss_detail {
constexpr double kLogEps = 1e-12;

template <typename S>
Tensor<S> const_scalar(double v) {
  return Tensor<S>::scalar(static_cast<S>(v));
}
}  // namespace loss_detail

// Classification loss -(1/Nc) * sum_i Y_i log(softmax(logits)_i) for a
// one-hot Y. The 1/Nc normalization is part of the contract. Logits may be
// [Nc] or [1,Nc].
template <typename S>
Tensor<S> ce_loss(const Tensor<S>& logits, int true_class) {
  Tensor<S> row = logits.ndim() == 1 ? reshape(logits, Shape{1, static_cast<int>(logits.size())})
                                     : logits;
  const int nc = row.cols();
  if (nc < 2) throw ContractError("ce_loss: needs at least two classes");
  if (true_class < 0 || true_class >= nc) throw ContractError("ce_loss: label out of range");
  Tensor<S> probs = softmax_rows(row);
  Tensor<S> p_true = slice_cols(probs, true_class, true_class + 1);
  Tensor<S> logp = log_op(p_true, static_cast<S>(loss_detail::kLogEps));
  return scale(sum_all(logp), static_cast<S>(-1.0 / nc));
}

// Dynamically weighted binary cross-entropy over attribute logits: the
// positive and negative terms are each averaged over their own support, and
// an empty side is omitted entirely.
template <typename S>
Tensor<S> weighted_bce_loss(const Tensor<S>& logits, const std::vector<uint8_t>& y) {
  if (static_cast<size_t>(logits.size()) != y.size()) {
    throw ShapeError("weighted_bce_loss: label length mismatch");
  }
  const int n = static_cast<int>(y.size());
  Tensor<S> flat = logits.ndim() == 1 ? logits : reshape(logits, Shape{n});
  Tensor<S> prob = sigmoid(flat);

  int pos = 0;
  for (uint8_t v : y) pos += v ? 1 : 0;
  const int neg = n - pos;

  // Masks as constant tensors select each side's entries.
  std::vector<S> pos_mask(static_cast<size_t>(n)), neg_mask(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    pos_mask[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] ? S(1) : S(0);
    neg_mask[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] ? S(0) : S(1);
  }

  Tensor<S> total = loss_detail::const_scalar<S>(0.0);
  const S eps = static_cast<S>(loss_detail::kLogEps);
  if (pos > 0) {
    Tensor<S> lp = log_op(prob, eps);
    Tensor<S> masked = mul(lp, Tensor<S>(Shape{n}, pos_mask));
    total = add(total, scale(sum_all(masked), static_cast<S>(-1.0 / pos)));
  }
  if (neg > 0) {
    Tensor<S> one_minus = sub(loss_detail::const_scalar<S>(1.0), prob);
    Tensor<S> ln = log_op(one_minus, eps);
    Tensor<S> masked = mul(ln, Tensor<S>(Shape{n}, neg_mask));
    total = add(total, scale(sum_all(masked), static_cast<S>(-1.0 / neg)));
  }
  return total;
}

// Sum of absolute differences over (cx, cy, w, h).
template <typename S>
Tensor<S> l1_box_loss(const Tensor<S>& box, const BoundingBox& gt) {
  if (box.size() != 4) throw ShapeError("l1_box_loss: box must have 4 components");
  Tensor<S> flat = box.ndim() == 1 ? box : reshape(box, Shape{4});
  Tensor<S> target(Shape{4}, {static_cast<S>(gt.cx), static_cast<S>(gt.cy), static_cast<S>(gt.w),
                              static_cast<S>(gt.h)});
  return sum_all(abs_val(sub(flat, target)));
}

// Differentiable generalized IoU loss, 1 - GIoU in [0, 2], built from engine
// primitives so the gradient reaches the predicted box. Epsilon-guarded
// denominators; the ground-truth box enters as constants.
template <typename S>
Tensor<S> giou_box_loss(const Tensor<S>& box, const BoundingBox& gt) {
  if (box.size() != 4) throw ShapeError("giou_box_loss: box must have 4 components");
  constexpr S eps = S(1e-9);
  Tensor<S> row = box.ndim() == 2 ? box : reshape(box, Shape{1, 4});
  Tensor<S> cx = slice_cols(row, 0, 1);
  Tensor<S> cy = slice_cols(row, 1, 2);
  Tensor<S> w = slice_cols(row, 2, 3);
  Tensor<S> h = slice_cols(row, 3, 4);

  Tensor<S> half_w = scale(w, S(0.5));
  Tensor<S> half_h = scale(h, S(0.5));
  Tensor<S> ax1 = sub(cx, half_w);
  Tensor<S> ax2 = add(cx, half_w);
  Tensor<S> ay1 = sub(cy, half_h);
  Tensor<S> ay2 = add(cy, half_h);

  const Corners g = to_corners(gt);
  auto c = [&](double v) { return Tensor<S>(Shape{1, 1}, {static_cast<S>(v)}); };

  Tensor<S> iw = relu(sub(minimum(ax2, c(g.x2)), maximum(ax1, c(g.x1))));
  Tensor<S> ih = relu(sub(minimum(ay2, c(g.y2)), maximum(ay1, c(g.y1))));
  Tensor<S> inter = mul(iw, ih);
  Tensor<S> area_pred = mul(w, h);
  Tensor<S> uni = sub(add(area_pred, c(box_area(gt))), inter);

  Tensor<S> hull_w = sub(maximum(ax2, c(g.x2)), minimum(ax1, c(g.x1)));
  Tensor<S> hull_h = sub(maximum(ay2, c(g.y2)), minimum(ay1, c(g.y1)));
  Tensor<S> hull = mul(hull_w, hull_h);

  Tensor<S> iou_term = div(inter, add_scalar(uni, eps));
  Tensor<S> hull_term = div(sub(hull, uni), add_scalar(hull, eps));
  Tensor<S> giou_val = sub(iou_term, hull_term);
  return reshape(sub(c(1.0), giou_val), Shape{1});
}

// Combined objective with per-term breakdown for logging.
template <typename S>
struct LossBreakdown {
  Tensor<S> total;
  double ce = 0, bce = 0, l1 = 0, giou = 0;
};

template <typename S>
LossBreakdown<S> total_loss(const Tensor<S>& category_logits, const Tensor<S>& attribute_logits,
                            const Tensor<S>& box, const TargetLabels& target,
                            const LossWeights& w = {}, const LossToggles& t = {}) {
  if (w.bce < 0 || w.l1 < 0 || w.giou < 0) {
    throw ContractError("total_loss: negative loss weight");
  }
  LossBreakdown<S> out;
  Tensor<S> total = Tensor<S>::scalar(S(0));
  if (t.ce) {
    Tensor<S> ce = ce_loss(category_logits, target.category);
    out.ce = static_cast<double>(ce.item());
    total = add(total, ce);
  }
  if (t.bce) {
    Tensor<S> bce = weighted_bce_loss(attribute_logits, target.attributes);
    out.bce = static_cast<double>(bce.item());
    total = add(total, scale(bce, static_cast<S>(w.bce)));
  }
  if (t.l1) {
    Tensor<S> l1 = l1_box_loss(box, target.box);
    out.l1 = static_cast<double>(l1.item());
    total = add(total, scale(l1, static_cast<S>(w.l1)));
  }
  if (t.giou) {
    Tensor<S> gl = giou_box_loss(box, target.box);
    out.giou = static_cast<double>(gl.item());
    total = add(total, scale(gl, static_cast<S>(w.giou)));
  }
  out.total = total;
  return out;
}

}  // namespace grounder
