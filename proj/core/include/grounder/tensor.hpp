#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "grounder/errors.hpp"

namespace grounder {

// Dimension list, outermost first. Row-major flat storage throughout.
using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline void validate_shape(const Shape& s, const char* who) {
  if (s.empty()) throw ShapeError(std::string(who) + ": empty shape");
  for (int d : s) {
    if (d <= 0) throw ShapeError(std::string(who) + ": non-positive dim in " + shape_str(s));
  }
}

namespace detail {

template <typename S>
struct Storage {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

// Dense n-dimensional value with optional gradient participation.
// Copying a Tensor shares storage (shallow, shared_ptr semantics); use
// clone() for a deep copy. Element type S is float for training and
// double for finite-difference gradient checks.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape) {
    validate_shape(shape, "Tensor");
    st_ = std::make_shared<detail::Storage<S>>();
    st_->data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
    st_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<S> data) {
    validate_shape(shape, "Tensor");
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
      throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    st_ = std::make_shared<detail::Storage<S>>();
    st_->shape = std::move(shape);
    st_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    for (auto& v : t.st_->data) v = value;
    return t;
  }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  bool defined() const { return static_cast<bool>(st_); }

  const Shape& shape() const { return st_->shape; }
  int ndim() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(st_->data.size()); }

  // 2D conveniences; throw for other ranks.
  int rows() const { require_ndim(2, "rows"); return st_->shape[0]; }
  int cols() const { require_ndim(2, "cols"); return st_->shape[1]; }

  S* data() { return st_->data.data(); }
  const S* data() const { return st_->data.data(); }
  std::vector<S>& vec() { return st_->data; }
  const std::vector<S>& vec() const { return st_->data; }

  S at(int64_t i) const { return st_->data[static_cast<size_t>(i)]; }
  S at2(int r, int c) const {
    require_ndim(2, "at2");
    return st_->data[static_cast<size_t>(r) * st_->shape[1] + c];
  }
  S item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return st_->data[0];
  }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    return *this;
  }

  // Gradient view, zeros if backward never reached this tensor.
  Tensor grad() const {
    Tensor g(st_->shape);
    if (st_->grad.size() == st_->data.size()) g.st_->data = st_->grad;
    return g;
  }
  bool has_grad_storage() const { return st_->grad.size() == st_->data.size(); }
  std::vector<S>& grad_vec() {
    st_->ensure_grad();
    return st_->grad;
  }
  void zero_grad() {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), S(0));
  }

  Tensor clone() const {
    Tensor t(st_->shape);
    t.st_->data = st_->data;
    t.st_->requires_grad = st_->requires_grad;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(st_->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(st_->data[i]);
    return Tensor<T>(st_->shape, std::move(out));
  }

  // Storage identity, for aliasing checks and tape bookkeeping.
  detail::Storage<S>* storage() const { return st_.get(); }
  const std::shared_ptr<detail::Storage<S>>& storage_ptr() const { return st_; }

 private:
  void require_ndim(int n, const char* who) const {
    if (ndim() != n) {
      throw ShapeError(std::string(who) + ": expected " + std::to_string(n) +
                       "-d tensor, got " + shape_str(st_->shape));
    }
  }

  std::shared_ptr<detail::Storage<S>> st_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace grounder
