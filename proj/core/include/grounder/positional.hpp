#pragma once

#include <cmath>

#include "grounder/tensor.hpp"

namespace grounder {

// Fixed 2D sine positional encoding over an h x w grid, shape [h*w, dim].
// The channel budget is split in halves for the y and x axes; within each
// half, channel pairs (2i, 2i+1) carry sin/cos of pos / 10000^(2i/(dim/2)),
// with pos the grid coordinate normalized by its axis length and scaled by
// 2*pi. Row-major over the grid: sequence index = row * w + col.
template <typename S>
Tensor<S> sine_positional_grid(int h, int w, int dim) {
  if (dim % 4 != 0) throw ShapeError("sine_positional_grid: dim must be divisible by 4");
  const double two_pi = 2.0 * 3.141592653589793238462643383279502884;
  const int half = dim / 2;
  Tensor<S> pe(Shape{h * w, dim});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      S* row = pe.data() + (static_cast<size_t>(r) * w + c) * dim;
      const double py = two_pi * r / h;
      const double px = two_pi * c / w;
      for (int i = 0; 2 * i + 1 < half; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / half);
        row[2 * i] = static_cast<S>(std::sin(py / freq));
        row[2 * i + 1] = static_cast<S>(std::cos(py / freq));
        row[half + 2 * i] = static_cast<S>(std::sin(px / freq));
        row[half + 2 * i + 1] = static_cast<S>(std::cos(px / freq));
      }
    }
  }
  return pe;
}

}  // namespace grounder
