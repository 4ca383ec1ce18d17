#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "grounder/param.hpp"

namespace grounder {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay and two learning-rate groups (parameters
// under the backbone prefix vs everything else). Frozen parameters are
// skipped entirely; a parameter with no gradient storage counts as zero
// gradient.
template <typename S>
class AdamW {
 public:
  AdamW(ParamStore<S>& store, AdamWConfig cfg, std::string backbone_prefix = "backbone.")
      : store_(&store), cfg_(cfg) {
    for (const auto& p : store.items()) {
      m_.emplace_back(static_cast<size_t>(p.tensor.size()), S(0));
      v_.emplace_back(static_cast<size_t>(p.tensor.size()), S(0));
      is_backbone_.push_back(p.name.rfind(backbone_prefix, 0) == 0 ? 1 : 0);
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  std::vector<std::vector<S>>& first_moments() { return m_; }
  std::vector<std::vector<S>>& second_moments() { return v_; }

  void step(double lr_main, double lr_backbone) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < store_->count(); ++pi) {
      auto& p = store_->at(pi);
      if (p.frozen) continue;
      const double lr = is_backbone_[pi] ? lr_backbone : lr_main;
      auto& data = p.tensor.vec();
      auto& m = m_[pi];
      auto& v = v_[pi];
      if (m.size() != data.size()) {
        throw ShapeError("AdamW: moment/parameter shape mismatch at " + p.name);
      }
      const std::vector<S>* gv = p.tensor.has_grad_storage() ? &grad_of(p) : nullptr;
      for (size_t i = 0; i < data.size(); ++i) {
        const S gi = gv ? (*gv)[i] : S(0);
        m[i] = static_cast<S>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
        v[i] = static_cast<S>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        // Decoupled decay first, then the adaptive step.
        double x = data[i] - lr * cfg_.weight_decay * data[i];
        x -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        data[i] = static_cast<S>(x);
      }
    }
  }

 private:
  static const std::vector<S>& grad_of(Param<S>& p) {
    return p.tensor.storage()->grad;
  }

  ParamStore<S>* store_;
  AdamWConfig cfg_;
  std::vector<std::vector<S>> m_;
  std::vector<std::vector<S>> v_;
  std::vector<uint8_t> is_backbone_;
  int64_t t_ = 0;
};

// Global-norm gradient clipping over non-frozen parameters; returns the norm
// before clipping. max_norm <= 0 disables.
template <typename S>
double clip_grad_norm(ParamStore<S>& store, double max_norm) {
  double sq = 0;
  for (auto& p : store.items()) {
    if (p.frozen || !p.tensor.has_grad_storage()) continue;
    const auto& g = p.tensor.storage()->grad;
    for (S v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& p : store.items()) {
      if (p.frozen || !p.tensor.has_grad_storage()) continue;
      for (auto& v : p.tensor.storage()->grad) v *= scale;
    }
  }
  return norm;
}

}  // namespace grounder
