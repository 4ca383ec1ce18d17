#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "grounder/tensor.hpp"

namespace grounder {

// A named trainable tensor. Frozen parameters accumulate no gradient
// (requires_grad is dropped while frozen) and are skipped by the optimizer.
template <typename S>
struct Param {
  std::string name;
  Tensor<S> tensor;
  bool frozen = false;
};

// Registry of a model's parameters in registration order. Names are unique
// dotted paths ("backbone.conv0.w", "decoder.2.cross_attn.wq", ...).
template <typename S>
class ParamStore {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter name " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.push_back(Param<S>{name, t, false});
    return t;
  }

  size_t count() const { return items_.size(); }
  Param<S>& at(size_t i) { return items_[i]; }
  const Param<S>& at(size_t i) const { return items_[i]; }

  Param<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  std::vector<Param<S>>& items() { return items_; }
  const std::vector<Param<S>>& items() const { return items_; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  void set_frozen(const std::string& prefix, bool frozen) {
    for (auto& p : items_) {
      if (p.name.rfind(prefix, 0) == 0) {
        p.frozen = frozen;
        p.tensor.set_requires_grad(!frozen);
      }
    }
  }

  void set_all_frozen(bool frozen) {
    for (auto& p : items_) {
      p.frozen = frozen;
      p.tensor.set_requires_grad(!frozen);
    }
  }

  // Copies parameter values from another store with identical layout.
  void copy_values_from(const ParamStore<S>& other) {
    if (other.count() != count()) throw ContractError("ParamStore: layout mismatch in copy");
    for (size_t i = 0; i < items_.size(); ++i) {
      if (other.items_[i].name != items_[i].name ||
          other.items_[i].tensor.shape() != items_[i].tensor.shape()) {
        throw ContractError("ParamStore: layout mismatch at " + items_[i].name);
      }
      items_[i].tensor.vec() = other.items_[i].tensor.vec();
    }
  }

 private:
  std::vector<Param<S>> items_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace grounder
