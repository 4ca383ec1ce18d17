#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <vector>

#include "grounder/random.hpp"
#include "grounder/tape.hpp"
#include "grounder/tensor.hpp"

namespace grounder {

// Boolean matrix for attention masks; m[r*cols+c] != 0 means "masked out".
struct BoolMat {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> m;

  BoolMat() = default;
  BoolMat(int r, int c) : rows(r), cols(c), m(static_cast<size_t>(r) * c, 0) {}

  uint8_t at(int r, int c) const { return m[static_cast<size_t>(r) * cols + c]; }
  void set(int r, int c, bool v) { m[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }

  // Same key mask for every query row.
  static BoolMat from_key_mask(int query_rows, const std::vector<uint8_t>& key_mask) {
    BoolMat b(query_rows, static_cast<int>(key_mask.size()));
    for (int r = 0; r < query_rows; ++r) {
      std::copy(key_mask.begin(), key_mask.end(),
                b.m.begin() + static_cast<size_t>(r) * b.cols);
    }
    return b;
  }
};

namespace detail {

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  const S* p = t.data();
  const int64_t n = t.size();
  bool ok = true;
  for (int64_t i = 0; i < n; ++i) ok &= std::isfinite(p[i]);
  if (!ok) throw NumericError(std::string(op) + ": produced non-finite element");
}

template <typename S>
bool recording(std::initializer_list<const Tensor<S>*> inputs) {
  if (!Tape<S>::current()) return false;
  for (auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// acc += g, elementwise
template <typename S>
void axpy(std::vector<S>& acc, const S* g, size_t n) {
  for (size_t i = 0; i < n; ++i) acc[i] += g[i];
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Trailing-dimension broadcasting: operands must have identical shapes, or
// the smaller operand's shape must be a trailing suffix of the larger's
// (a 1-element tensor broadcasts to anything). Returns true when `b` is the
// broadcast (smaller) side.
template <typename S>
bool broadcast_roles(const char* op, const Tensor<S>& a, const Tensor<S>& b, bool* same) {
  if (a.shape() == b.shape()) {
    *same = true;
    return false;
  }
  *same = false;
  if (b.size() <= a.size() && (b.size() == 1 || is_suffix(b.shape(), a.shape()))) return true;
  if (a.size() <= b.size() && (a.size() == 1 || is_suffix(a.shape(), b.shape()))) return false;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not broadcast-compatible");
}

// C(m×n) += A(m×k) · B(k×n)
template <typename S>
void mm_nn_acc(const S* A, const S* B, S* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = A + static_cast<size_t>(i) * k;
    S* crow = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m×n) += A(m×k) · B(n×k)ᵀ
template <typename S>
void mm_nt_acc(const S* A, const S* B, S* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = A + static_cast<size_t>(i) * k;
    S* crow = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = B + static_cast<size_t>(j) * k;
      S acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C(k×n) += A(m×k)ᵀ · B(m×n)
template <typename S>
void mm_tn_acc(const S* A, const S* B, S* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = A + static_cast<size_t>(i) * k;
    const S* brow = B + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      S* crow = C + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise ops (trailing-dimension broadcast)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  bool same = false;
  const bool b_small = detail::broadcast_roles("add", a, b, &same);
  const Tensor<S>& big = (same || b_small) ? a : b;
  const Tensor<S>& small = (same || b_small) ? b : a;
  const int64_t n = big.size(), ns = small.size();
  Tensor<S> out(big.shape());
  const S* pb = big.data();
  const S* psm = small.data();
  S* po = out.data();
  if (same) {
    for (int64_t i = 0; i < n; ++i) po[i] = pb[i] + psm[i];
  } else {
    for (int64_t i = 0; i < n; ++i) po[i] = pb[i] + psm[i % ns];
  }
  detail::check_finite(out, "add");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out, same, b_small]() {
      const auto& g = out.storage()->grad;
      const int64_t n2 = out.size();
      auto acc = [&](const Tensor<S>& t, bool is_small) {
        if (!t.requires_grad()) return;
        auto& gr = const_cast<Tensor<S>&>(t).grad_vec();
        if (!is_small) {
          detail::axpy(gr, g.data(), static_cast<size_t>(n2));
        } else {
          const int64_t ns2 = t.size();
          for (int64_t i = 0; i < n2; ++i) gr[i % ns2] += g[i];
        }
      };
      acc(a, !same && !b_small);
      acc(b, !same && b_small);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  bool same = false;
  const bool b_small = detail::broadcast_roles("sub", a, b, &same);
  const Shape& out_shape = (same || b_small) ? a.shape() : b.shape();
  Tensor<S> out(out_shape);
  const int64_t n = out.size(), na = a.size(), nb = b.size();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i % na] - pb[i % nb];
  detail::check_finite(out, "sub");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() {
      const auto& g = out.storage()->grad;
      const int64_t n2 = out.size();
      if (a.requires_grad()) {
        auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
        const int64_t na2 = a.size();
        for (int64_t i = 0; i < n2; ++i) ga[i % na2] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = const_cast<Tensor<S>&>(b).grad_vec();
        const int64_t nb2 = b.size();
        for (int64_t i = 0; i < n2; ++i) gb[i % nb2] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  bool same = false;
  const bool b_small = detail::broadcast_roles("mul", a, b, &same);
  const Shape& out_shape = (same || b_small) ? a.shape() : b.shape();
  Tensor<S> out(out_shape);
  const int64_t n = out.size(), na = a.size(), nb = b.size();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i % na] * pb[i % nb];
  detail::check_finite(out, "mul");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() {
      const auto& g = out.storage()->grad;
      const int64_t n2 = out.size();
      const int64_t na2 = a.size(), nb2 = b.size();
      const S* pa2 = a.data();
      const S* pb2 = b.data();
      if (a.requires_grad()) {
        auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
        for (int64_t i = 0; i < n2; ++i) ga[i % na2] += g[i] * pb2[i % nb2];
      }
      if (b.requires_grad()) {
        auto& gb = const_cast<Tensor<S>&>(b).grad_vec();
        for (int64_t i = 0; i < n2; ++i) gb[i % nb2] += g[i] * pa2[i % na2];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  bool same = false;
  const bool b_small = detail::broadcast_roles("div", a, b, &same);
  const Shape& out_shape = (same || b_small) ? a.shape() : b.shape();
  Tensor<S> out(out_shape);
  const int64_t n = out.size(), na = a.size(), nb = b.size();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i % na] / pb[i % nb];
  detail::check_finite(out, "div");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() {
      const auto& g = out.storage()->grad;
      const int64_t n2 = out.size();
      const int64_t na2 = a.size(), nb2 = b.size();
      const S* pa2 = a.data();
      const S* pb2 = b.data();
      if (a.requires_grad()) {
        auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
        for (int64_t i = 0; i < n2; ++i) ga[i % na2] += g[i] / pb2[i % nb2];
      }
      if (b.requires_grad()) {
        auto& gb = const_cast<Tensor<S>&>(b).grad_vec();
        for (int64_t i = 0; i < n2; ++i) {
          const S bv = pb2[i % nb2];
          gb[i % nb2] -= g[i] * pa2[i % na2] / (bv * bv);
        }
      }
    });
  }
  return out;
}

// Elementwise min/max over same-shape operands. On ties the gradient goes to
// the first operand.
template <typename S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("minimum: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::min(a.data()[i], b.data()[i]);
  detail::check_finite(out, "minimum");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() {
      const auto& g = out.storage()->grad;
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) {
        const bool take_a = a.data()[i] <= b.data()[i];
        if (take_a && a.requires_grad()) const_cast<Tensor<S>&>(a).grad_vec()[i] += g[i];
        if (!take_a && b.requires_grad()) const_cast<Tensor<S>&>(b).grad_vec()[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> maximum(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("maximum: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::max(a.data()[i], b.data()[i]);
  detail::check_finite(out, "maximum");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out]() {
      const auto& g = out.storage()->grad;
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) {
        const bool take_a = a.data()[i] >= b.data()[i];
        if (take_a && a.requires_grad()) const_cast<Tensor<S>&>(a).grad_vec()[i] += g[i];
        if (!take_a && b.requires_grad()) const_cast<Tensor<S>&>(b).grad_vec()[i] += g[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar and unary ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  detail::check_finite(out, "scale");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, c]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  detail::check_finite(out, "add_scalar");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out]() {
      if (!a.requires_grad()) return;
      detail::axpy(const_cast<Tensor<S>&>(a).grad_vec(), out.storage()->grad.data(),
                   static_cast<size_t>(out.size()));
    });
  }
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
  detail::check_finite(out, "relu");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) {
        if (a.data()[i] > S(0)) ga[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) {
    const S x = a.data()[i];
    out.data()[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                              : std::exp(x) / (S(1) + std::exp(x));
  }
  detail::check_finite(out, "sigmoid");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) {
        const S y = out.data()[i];
        ga[i] += g[i] * y * (S(1) - y);
      }
    });
  }
  return out;
}

// Natural log. With eps == 0, non-positive input is a domain error; with
// eps > 0 the input is clamped to eps first (and the clamped region gets
// zero gradient).
template <typename S>
Tensor<S> log_op(const Tensor<S>& a, S eps = S(0)) {
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) {
    const S x = a.data()[i];
    if (eps == S(0)) {
      if (x <= S(0)) throw DomainError("log: non-positive input " + std::to_string(x));
      out.data()[i] = std::log(x);
    } else {
      out.data()[i] = std::log(std::max(x, eps));
    }
  }
  detail::check_finite(out, "log");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, eps]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) {
        const S x = a.data()[i];
        if (eps == S(0) || x > eps) ga[i] += g[i] / x;
      }
    });
  }
  return out;
}

// |x| with subgradient 0 at x == 0.
template <typename S>
Tensor<S> abs_val(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::abs(a.data()[i]);
  detail::check_finite(out, "abs");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) {
        const S x = a.data()[i];
        if (x > S(0)) ga[i] += g[i];
        else if (x < S(0)) ga[i] -= g[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S acc = 0;
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) acc += a.data()[i];
  Tensor<S> out = Tensor<S>::scalar(acc);
  detail::check_finite(out, "sum");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out]() {
      if (!a.requires_grad()) return;
      const S g = out.storage()->grad[0];
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.size()));
}

// Column means of a 2D tensor, result shape [1, cols].
template <typename S>
Tensor<S> mean_axis0(const Tensor<S>& a) {
  const int r = a.rows(), c = a.cols();
  Tensor<S> out(Shape{1, c});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.data()[j] += a.data()[static_cast<size_t>(i) * c + j];
  }
  for (int j = 0; j < c; ++j) out.data()[j] /= static_cast<S>(r);
  detail::check_finite(out, "mean_axis0");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, r, c]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      const S inv = S(1) / static_cast<S>(r);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[j] * inv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  validate_shape(shape, "reshape");
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<S> out(shape, a.vec());
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out]() {
      if (!a.requires_grad()) return;
      detail::axpy(const_cast<Tensor<S>&>(a).grad_vec(), out.storage()->grad.data(),
                   static_cast<size_t>(a.size()));
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  const int r = a.rows(), c = a.cols();
  Tensor<S> out(Shape{c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      out.data()[static_cast<size_t>(j) * r + i] = a.data()[static_cast<size_t>(i) * c + j];
    }
  }
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, r, c]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j) * r + i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& a, int r0, int r1) {
  const int r = a.rows(), c = a.cols();
  if (r0 < 0 || r1 > r || r0 >= r1) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") for " + shape_str(a.shape()));
  }
  Tensor<S> out(Shape{r1 - r0, c});
  std::copy(a.data() + static_cast<size_t>(r0) * c, a.data() + static_cast<size_t>(r1) * c,
            out.data());
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, r0, c]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(r0) * c + i] += g[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, int c0, int c1) {
  const int r = a.rows(), c = a.cols();
  if (c0 < 0 || c1 > c || c0 >= c1) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for " + shape_str(a.shape()));
  }
  const int w = c1 - c0;
  Tensor<S> out(Shape{r, w});
  for (int i = 0; i < r; ++i) {
    std::copy(a.data() + static_cast<size_t>(i) * c + c0, a.data() + static_cast<size_t>(i) * c + c1,
              out.data() + static_cast<size_t>(i) * w);
  }
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, c0, c, w, r]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < w; ++j) {
          ga[static_cast<size_t>(i) * c + c0 + j] += g[static_cast<size_t>(i) * w + j];
        }
      }
    });
  }
  return out;
}

// Concatenate 2D tensors along axis 0 (stack rows) or 1 (side by side).
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const int r0 = parts[0].rows(), c0 = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    if (axis == 0 && p.cols() != c0) throw ShapeError("concat: column mismatch");
    if (axis == 1 && p.rows() != r0) throw ShapeError("concat: row mismatch");
    total += (axis == 0) ? p.rows() : p.cols();
  }
  Tensor<S> out(axis == 0 ? Shape{total, c0} : Shape{r0, total});
  int off = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      std::copy(p.data(), p.data() + p.size(), out.data() + static_cast<size_t>(off) * c0);
      off += p.rows();
    } else {
      for (int i = 0; i < r0; ++i) {
        std::copy(p.data() + static_cast<size_t>(i) * p.cols(),
                  p.data() + static_cast<size_t>(i + 1) * p.cols(),
                  out.data() + static_cast<size_t>(i) * total + off);
      }
      off += p.cols();
    }
  }
  bool any_rg = false;
  for (const auto& p : parts) any_rg |= p.requires_grad();
  if (Tape<S>::current() && any_rg) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([parts, out, axis, total]() {
      const auto& g = out.storage()->grad;
      int off2 = 0;
      for (const auto& p : parts) {
        const int pr = p.rows(), pc = p.cols();
        if (p.requires_grad()) {
          auto& gp = const_cast<Tensor<S>&>(p).grad_vec();
          if (axis == 0) {
            const int oc = out.cols();
            for (int64_t i = 0; i < p.size(); ++i) gp[i] += g[static_cast<size_t>(off2) * oc + i];
          } else {
            for (int i = 0; i < pr; ++i) {
              for (int j = 0; j < pc; ++j) {
                gp[static_cast<size_t>(i) * pc + j] += g[static_cast<size_t>(i) * total + off2 + j];
              }
            }
          }
        }
        off2 += (axis == 0) ? pr : pc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<S> out(Shape{m, n});
  detail::mm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
  detail::check_finite(out, "matmul");
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, b, out, m, k, n]() {
      const auto& g = out.storage()->grad;
      if (a.requires_grad()) {
        auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
        detail::mm_nt_acc(g.data(), b.data(), ga.data(), m, n, k);  // dA = g·Bᵀ
      }
      if (b.requires_grad()) {
        auto& gb = const_cast<Tensor<S>&>(b).grad_vec();
        detail::mm_tn_acc(a.data(), g.data(), gb.data(), m, k, n);  // dB = Aᵀ·g
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Row-wise softmax with optional additive -inf masking applied before
// exponentiation; masked entries come out exactly 0. Numerically stabilized
// by row-max subtraction over the unmasked entries.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a, const BoolMat* mask = nullptr) {
  const int r = a.rows(), c = a.cols();
  if (mask && (mask->rows != r || mask->cols != c)) {
    throw ShapeError("softmax_rows: mask shape mismatch");
  }
  Tensor<S> out(a.shape());
  for (int i = 0; i < r; ++i) {
    const S* row = a.data() + static_cast<size_t>(i) * c;
    S* orow = out.data() + static_cast<size_t>(i) * c;
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < c; ++j) {
      if (!mask || !mask->at(i, j)) mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) {
      throw DegenerateMaskError("softmax_rows: row " + std::to_string(i) + " fully masked");
    }
    S denom = 0;
    for (int j = 0; j < c; ++j) {
      const S e = (!mask || !mask->at(i, j)) ? std::exp(row[j] - mx) : S(0);
      orow[j] = e;
      denom += e;
    }
    for (int j = 0; j < c; ++j) orow[j] /= denom;
  }
  detail::check_finite(out, "softmax_rows");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, r, c]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      for (int i = 0; i < r; ++i) {
        const S* y = out.data() + static_cast<size_t>(i) * c;
        const S* gi = g.data() + static_cast<size_t>(i) * c;
        S dot = 0;
        for (int j = 0; j < c; ++j) dot += gi[j] * y[j];
        S* gai = ga.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) gai[j] += y[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

// Normalizes each row of a 2D tensor to zero mean / unit variance
// (epsilon inside the square root), then applies learnable gain and shift.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& shift,
                     S eps = S(1e-5)) {
  const int r = x.rows(), c = x.cols();
  if (gain.size() != c || shift.size() != c) {
    throw ShapeError("layer_norm: gain/shift must have length " + std::to_string(c));
  }
  Tensor<S> out(x.shape());
  Tensor<S> xhat(x.shape());
  std::vector<S> inv_std(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const S* row = x.data() + static_cast<size_t>(i) * c;
    S mu = 0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<S>(c);
    S var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<S>(c);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    S* hrow = xhat.data() + static_cast<size_t>(i) * c;
    S* orow = out.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      hrow[j] = (row[j] - mu) * inv;
      orow[j] = gain.data()[j] * hrow[j] + shift.data()[j];
    }
  }
  detail::check_finite(out, "layer_norm");
  if (detail::recording<S>({&x, &gain, &shift})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, gain, shift, out, xhat, inv_std, r, c]() {
      const auto& g = out.storage()->grad;
      if (gain.requires_grad()) {
        auto& gg = const_cast<Tensor<S>&>(gain).grad_vec();
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) {
            gg[j] += g[static_cast<size_t>(i) * c + j] * xhat.data()[static_cast<size_t>(i) * c + j];
          }
        }
      }
      if (shift.requires_grad()) {
        auto& gs = const_cast<Tensor<S>&>(shift).grad_vec();
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) gs[j] += g[static_cast<size_t>(i) * c + j];
        }
      }
      if (x.requires_grad()) {
        auto& gx = const_cast<Tensor<S>&>(x).grad_vec();
        for (int i = 0; i < r; ++i) {
          const S* gi = g.data() + static_cast<size_t>(i) * c;
          const S* hi = xhat.data() + static_cast<size_t>(i) * c;
          S mean_dh = 0, mean_dh_h = 0;
          std::vector<S> dh(static_cast<size_t>(c));
          for (int j = 0; j < c; ++j) {
            dh[static_cast<size_t>(j)] = gi[j] * gain.data()[j];
            mean_dh += dh[static_cast<size_t>(j)];
            mean_dh_h += dh[static_cast<size_t>(j)] * hi[j];
          }
          mean_dh /= static_cast<S>(c);
          mean_dh_h /= static_cast<S>(c);
          const S inv = inv_std[static_cast<size_t>(i)];
          S* gxi = gx.data() + static_cast<size_t>(i) * c;
          for (int j = 0; j < c; ++j) {
            gxi[j] += inv * (dh[static_cast<size_t>(j)] - mean_dh - hi[j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  const int v = table.rows(), d = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw DomainError("embedding_lookup: id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(v));
    }
  }
  const int n = static_cast<int>(ids.size());
  Tensor<S> out(Shape{n, d});
  for (int i = 0; i < n; ++i) {
    std::copy(table.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d,
              table.data() + static_cast<size_t>(ids[static_cast<size_t>(i)] + 1) * d,
              out.data() + static_cast<size_t>(i) * d);
  }
  if (detail::recording<S>({&table})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([table, out, ids, d]() {
      if (!table.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& gt = const_cast<Tensor<S>&>(table).grad_vec();
      for (size_t i = 0; i < ids.size(); ++i) {
        for (int j = 0; j < d; ++j) {
          gt[static_cast<size_t>(ids[i]) * d + j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2D convolution (channels-last, square kernel), via im2col + matmul
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad) {
  if (x.ndim() != 3) throw ShapeError("conv2d: input must be [H,W,C], got " + shape_str(x.shape()));
  if (w.ndim() != 4) throw ShapeError("conv2d: weight must be [k,k,Cin,Cout]");
  const int h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const int k = w.dim(0), cout = w.dim(3);
  if (w.dim(1) != k || w.dim(2) != cin) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  if (b.defined() && b.size() != cout) throw ShapeError("conv2d: bias length mismatch");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  const int patch = k * k * cin;

  // im2col: one row per output pixel.
  Tensor<S> cols(Shape{oh * ow, patch});
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* crow = cols.data() + (static_cast<size_t>(oy) * ow + ox) * patch;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          S* dst = crow + (static_cast<size_t>(ky) * k + kx) * cin;
          if (iy >= 0 && iy < h && ix >= 0 && ix < wd) {
            const S* src = x.data() + (static_cast<size_t>(iy) * wd + ix) * cin;
            std::copy(src, src + cin, dst);
          } else {
            std::fill(dst, dst + cin, S(0));
          }
        }
      }
    }
  }

  Tensor<S> out(Shape{oh, ow, cout});
  detail::mm_nn_acc(cols.data(), w.data(), out.data(), oh * ow, patch, cout);
  if (b.defined()) {
    for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) {
      for (int j = 0; j < cout; ++j) out.data()[i * cout + j] += b.data()[j];
    }
  }
  detail::check_finite(out, "conv2d");

  const bool rec = b.defined() ? detail::recording<S>({&x, &w, &b})
                               : detail::recording<S>({&x, &w});
  if (rec) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([x, w, b, out, cols, stride, pad, h, wd, cin, k, cout, oh, ow,
                                patch]() {
      const auto& g = out.storage()->grad;  // [oh*ow, cout] flattened
      if (b.defined() && b.requires_grad()) {
        auto& gb = const_cast<Tensor<S>&>(b).grad_vec();
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) {
          for (int j = 0; j < cout; ++j) gb[static_cast<size_t>(j)] += g[i * cout + j];
        }
      }
      if (w.requires_grad()) {
        auto& gw = const_cast<Tensor<S>&>(w).grad_vec();
        detail::mm_tn_acc(cols.data(), g.data(), gw.data(), oh * ow, patch, cout);
      }
      if (x.requires_grad()) {
        std::vector<S> dcols(static_cast<size_t>(oh) * ow * patch, S(0));
        detail::mm_nt_acc(g.data(), w.data(), dcols.data(), oh * ow, cout, patch);
        auto& gx = const_cast<Tensor<S>&>(x).grad_vec();
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const S* crow = dcols.data() + (static_cast<size_t>(oy) * ow + ox) * patch;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                const S* src = crow + (static_cast<size_t>(ky) * k + kx) * cin;
                S* dst = gx.data() + (static_cast<size_t>(iy) * wd + ix) * cin;
                for (int ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; identity when rate == 0)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> dropout(const Tensor<S>& a, double rate, RandomSource& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  Tensor<S> out(a.shape());
  std::vector<uint8_t> keep(static_cast<size_t>(a.size()));
  const S inv_keep = S(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < a.size(); ++i) {
    keep[static_cast<size_t>(i)] = rng.uniform() >= rate ? 1 : 0;
    out.data()[i] = keep[static_cast<size_t>(i)] ? a.data()[i] * inv_keep : S(0);
  }
  detail::check_finite(out, "dropout");
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::current()->record([a, out, keep, inv_keep]() {
      if (!a.requires_grad()) return;
      const auto& g = out.storage()->grad;
      auto& ga = const_cast<Tensor<S>&>(a).grad_vec();
      for (size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) ga[i] += g[i] * inv_keep;
      }
    });
  }
  return out;
}

}  // namespace grounder
