#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "grounder/tape.hpp"
#include "grounder/tensor.hpp"

namespace grounder {

// Central-difference gradient verification. Runs in 64-bit only: finite
// differences are unreliable at 32-bit. Returns the maximum over elements of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<Tensor64(const Tensor64&)>& f, Tensor64 x,
                         double h = 1e-5) {
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape64 tape;
    Tape64::Scope scope(tape);
    Tensor64 loss = f(x);
    if (loss.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
    tape.backward(loss);
    analytic = x.grad().vec();
  }
  double worst = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double up = f(x).item();
    x.data()[i] = v - h;
    const double dn = f(x).item();
    x.data()[i] = v;
    const double numeric = (up - dn) / (2.0 * h);
    const double a = analytic[static_cast<size_t>(i)];
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

// Same check across a set of leaf tensors (model parameters); f is evaluated
// with the leaves in place and must rebuild its graph on every call.
inline double grad_check_params(const std::function<Tensor64()>& f,
                                const std::vector<Tensor64>& leaves, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    for (auto t : leaves) t.zero_grad();
    Tape64 tape;
    Tape64::Scope scope(tape);
    Tensor64 loss = f();
    if (loss.size() != 1) throw ContractError("grad_check_params: f must be scalar-valued");
    tape.backward(loss);
    for (const auto& t : leaves) analytic.push_back(t.grad().vec());
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < leaves.size(); ++pi) {
    Tensor64 t = leaves[pi];
    for (int64_t i = 0; i < t.size(); ++i) {
      const double v = t.data()[i];
      t.data()[i] = v + h;
      const double up = f().item();
      t.data()[i] = v - h;
      const double dn = f().item();
      t.data()[i] = v;
      const double numeric = (up - dn) / (2.0 * h);
      const double a = analytic[pi][static_cast<size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace grounder
