#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "grounder/nn.hpp"
#include "grounder/ops.hpp"

namespace grounder {

enum class AttnRole { self_visual, self_textual, cross };

inline const char* attn_role_name(AttnRole r) {
  switch (r) {
    case AttnRole::self_visual: return "self-visual";
    case AttnRole::self_textual: return "self-textual";
    case AttnRole::cross: return "cross";
  }
  return "?";
}

// Post-softmax, pre-value-mix attention weights of one head.
template <typename S>
struct AttentionRecord {
  int layer = 0;
  int head = 0;
  AttnRole role = AttnRole::cross;
  int query_len = 0;
  int key_len = 0;
  std::vector<S> weights;  // row-major query_len x key_len

  S at(int q, int k) const { return weights[static_cast<size_t>(q) * key_len + k]; }
};

// Recording is opt-in: pass a trace to capture weights. Cross-attention is
// always captured when a trace is present; self-attention only when
// record_self is set.
template <typename S>
struct AttentionTrace {
  bool record_self = false;
  std::vector<AttentionRecord<S>> records;

  std::vector<const AttentionRecord<S>*> cross_records() const {
    std::vector<const AttentionRecord<S>*> out;
    for (const auto& r : records) {
      if (r.role == AttnRole::cross) out.push_back(&r);
    }
    return out;
  }
};

// out = softmax(Q·Kᵀ/√d)·V. The attention weight matrix is returned alongside
// the mix; output row count always equals the query row count.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k,
                                                     const Tensor<S>& v,
                                                     const BoolMat* mask = nullptr) {
  if (q.cols() != k.cols()) {
    throw ShapeError("scaled_dot_attention: query/key feature dims differ");
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("scaled_dot_attention: key/value lengths differ");
  }
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(q.cols()));
  Tensor<S> logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
  Tensor<S> weights = softmax_rows(logits, mask);
  Tensor<S> out = matmul(weights, v);
  return {out, weights};
}

// Multi-head attention with fused DxD projections sliced per head and a DxD
// output projection. Self-attention is the degenerate case query == key ==
// value; cross-attention takes textual queries against visual keys/values.
template <typename S>
struct MultiHeadAttention {
  int num_heads = 0;
  int model_dim = 0;
  Tensor<S> wq, wk, wv, wo;  // each [D, D]

  static MultiHeadAttention make(ParamStore<S>& store, const std::string& name, int dim,
                                 int heads, RandomSource& rng) {
    if (heads <= 0 || dim % heads != 0) {
      throw ContractError("MultiHeadAttention: model dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(heads));
    }
    MultiHeadAttention m;
    m.num_heads = heads;
    m.model_dim = dim;
    auto proj = [&](const char* suffix) {
      Tensor<S> w(Shape{dim, dim});
      xavier_uniform(w, dim, dim, rng);
      return store.add(name + "." + suffix, w);
    };
    m.wq = proj("wq");
    m.wk = proj("wk");
    m.wv = proj("wv");
    m.wo = proj("wo");
    return m;
  }

  int head_dim() const { return model_dim / num_heads; }

  Tensor<S> forward(const Tensor<S>& query_seq, const Tensor<S>& key_seq,
                    const Tensor<S>& value_seq, const std::vector<uint8_t>* key_mask = nullptr,
                    AttentionTrace<S>* trace = nullptr, int layer_index = 0,
                    AttnRole role = AttnRole::cross) const {
    if (query_seq.cols() != model_dim || key_seq.cols() != model_dim ||
        value_seq.cols() != model_dim) {
      throw ShapeError("multi_head_attention: sequence feature dim must equal model dim");
    }
    if (key_seq.rows() != value_seq.rows()) {
      throw ShapeError("multi_head_attention: key/value lengths differ");
    }
    if (key_mask && static_cast<int>(key_mask->size()) != key_seq.rows()) {
      throw ShapeError("multi_head_attention: mask length does not match key length");
    }
    const Tensor<S> q = matmul(query_seq, wq);
    const Tensor<S> k = matmul(key_seq, wk);
    const Tensor<S> v = matmul(value_seq, wv);

    BoolMat mask;
    if (key_mask) mask = BoolMat::from_key_mask(query_seq.rows(), *key_mask);

    const int dh = head_dim();
    std::vector<Tensor<S>> head_outs;
    head_outs.reserve(static_cast<size_t>(num_heads));
    for (int h = 0; h < num_heads; ++h) {
      auto qh = slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = slice_cols(v, h * dh, (h + 1) * dh);
      auto [oh, weights] = scaled_dot_attention(qh, kh, vh, key_mask ? &mask : nullptr);
      head_outs.push_back(oh);
      if (trace && (role == AttnRole::cross || trace->record_self)) {
        AttentionRecord<S> rec;
        rec.layer = layer_index;
        rec.head = h;
        rec.role = role;
        rec.query_len = weights.rows();
        rec.key_len = weights.cols();
        rec.weights = weights.vec();
        trace->records.push_back(std::move(rec));
      }
    }
    return matmul(concat(head_outs, 1), wo);
  }
};

}  // namespace grounder
