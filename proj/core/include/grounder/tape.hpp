#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "grounder/tensor.hpp"

namespace grounder {

// Ordered record of executed operations. Ops append a reverse rule while a
// Tape is bound via Tape::Scope; backward() replays the rules exactly once
// in reverse execution order. One tape per forward graph, single-threaded;
// the binding is thread-local so independent graphs may run on distinct
// threads.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(current_ref()) { current_ref() = &t; }
    ~Scope() { current_ref() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current() { return current_ref(); }

  void record(std::function<void()> reverse_rule) {
    entries_.push_back(std::move(reverse_rule));
  }

  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(Tensor<S>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    loss.grad_vec()[0] = S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  static Tape*& current_ref() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  std::vector<std::function<void()>> entries_;
};

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

}  // namespace grounder
