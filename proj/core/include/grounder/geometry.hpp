#pragma once

#include <cstdint>
#include <vector>

namespace grounder {

// Axis-aligned box in normalized center format, components in [0,1] of the
// image extent.
struct BoundingBox {
  double cx = 0, cy = 0, w = 0, h = 0;
};

struct Corners {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

Corners to_corners(const BoundingBox& b);
BoundingBox from_corners(const Corners& c);

double box_area(const BoundingBox& b);

// Plain IoU; 0 when the union is empty.
double iou(const BoundingBox& a, const BoundingBox& b);

struct GiouValue {
  double value = 0;      // in [-1, 1]
  bool degenerate = false;  // both boxes had zero area
};

// Generalized IoU: IoU minus the hull's empty fraction. Degenerate pairs
// (both areas zero) report value 0 with the flag set.
GiouValue giou(const BoundingBox& a, const BoundingBox& b);

// Ground truth for one referent.
struct TargetLabels {
  int category = 0;                  // index into N_c
  std::vector<uint8_t> attributes;   // length N_a, 0/1
  BoundingBox box;
};

}  // namespace grounder
