#include "grounder/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace grounder {

namespace {
constexpr double kAreaEps = 1e-9;
}

Corners to_corners(const BoundingBox& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

BoundingBox from_corners(const Corners& c) {
  return {(c.x1 + c.x2) / 2, (c.y1 + c.y2) / 2, c.x2 - c.x1, c.y2 - c.y1};
}

double box_area(const BoundingBox& b) { return b.w * b.h; }

namespace {

// Corner-space area so that identical boxes give bitwise-identical
// intersection/union/hull terms (GIoU(a,a) is exactly 1).
double corner_area(const Corners& c) {
  return std::max(0.0, c.x2 - c.x1) * std::max(0.0, c.y2 - c.y1);
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = corner_area(ca) + corner_area(cb) - inter;
  return inter / std::max(uni, kAreaEps);
}

GiouValue giou(const BoundingBox& a, const BoundingBox& b) {
  GiouValue out;
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double area_a = corner_area(ca), area_b = corner_area(cb);
  if (area_a <= 0.0 && area_b <= 0.0) {
    out.degenerate = true;
    return out;
  }
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  const double hull_w = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  const double hull_h = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  const double hull = hull_w * hull_h;
  out.value = inter / std::max(uni, kAreaEps) - (hull - uni) / std::max(hull, kAreaEps);
  return out;
}

}  // namespace grounder
