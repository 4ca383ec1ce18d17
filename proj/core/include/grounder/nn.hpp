#pragma once

#include <cmath>
#include <string>

#include "grounder/ops.hpp"
#include "grounder/param.hpp"
#include "grounder/random.hpp"

namespace grounder {

// Uniform Xavier-style fan-based init for linear/projection weights.
template <typename S>
void xavier_uniform(Tensor<S>& t, int fan_in, int fan_out, RandomSource& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
void normal_init(Tensor<S>& t, double sigma, RandomSource& rng) {
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.normal(0.0, sigma));
}

template <typename S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out], optional

  static Linear make(ParamStore<S>& store, const std::string& name, int in, int out,
                     RandomSource& rng, bool bias = true) {
    Linear l;
    Tensor<S> w(Shape{in, out});
    xavier_uniform(w, in, out, rng);
    l.w = store.add(name + ".w", w);
    if (bias) l.b = store.add(name + ".b", Tensor<S>(Shape{out}));
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
  }
};

template <typename S>
struct LayerNormBlock {
  Tensor<S> gain;
  Tensor<S> shift;
  S eps = S(1e-5);

  static LayerNormBlock make(ParamStore<S>& store, const std::string& name, int dim) {
    LayerNormBlock ln;
    ln.gain = store.add(name + ".gain", Tensor<S>::full(Shape{dim}, S(1)));
    ln.shift = store.add(name + ".shift", Tensor<S>(Shape{dim}));
    return ln;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gain, shift, eps); }
};

// 2-layer MLP with ReLU.
template <typename S>
struct FeedForward {
  Linear<S> fc1, fc2;

  static FeedForward make(ParamStore<S>& store, const std::string& name, int dim, int hidden,
                          RandomSource& rng) {
    FeedForward f;
    f.fc1 = Linear<S>::make(store, name + ".fc1", dim, hidden, rng);
    f.fc2 = Linear<S>::make(store, name + ".fc2", hidden, dim, rng);
    return f;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return fc2.forward(relu(fc1.forward(x))); }
};

// Channels-last 3x3 convolution block.
template <typename S>
struct Conv2dLayer {
  Tensor<S> w;  // [k,k,in,out]
  Tensor<S> b;  // [out]
  int stride = 1;
  int pad = 1;

  static Conv2dLayer make(ParamStore<S>& store, const std::string& name, int in, int out, int k,
                          int stride, int pad, RandomSource& rng) {
    Conv2dLayer c;
    c.stride = stride;
    c.pad = pad;
    Tensor<S> w(Shape{k, k, in, out});
    xavier_uniform(w, in * k * k, out * k * k, rng);
    c.w = store.add(name + ".w", w);
    c.b = store.add(name + ".b", Tensor<S>(Shape{out}));
    return c;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad); }
};

}  // namespace grounder
