#pragma once

#include <string>
#include <vector>

#include "grounder/attention.hpp"
#include "grounder/losses.hpp"
#include "grounder/nn.hpp"
#include "grounder/positional.hpp"
#include "grounder/tokens.hpp"

namespace grounder {

enum class QueryMode { word_level, sentence_pooled };

// Every architectural hyperparameter of the grounding network.
struct ModelConfig {
  int image_size = 64;        // H == W
  int backbone_stride = 8;    // power of two; grid = image_size / stride
  int backbone_channels = 64;
  int dim = 64;               // D
  int heads = 4;
  int encoder_layers = 2;     // M
  int decoder_layers = 3;     // N
  int ffn_hidden = 256;
  int t_max = 15;             // word tokens, excludes [CLS]
  int vocab_size = 22;
  int num_categories = 4;
  int num_attributes = 8;
  QueryMode query_mode = QueryMode::word_level;
  bool norm_after_ffn = true;
  double dropout = 0.0;
  LossWeights loss_weights;

  int grid() const { return image_size / backbone_stride; }
  int visual_len() const { return grid() * grid(); }

  void validate() const {
    if (image_size <= 0 || backbone_stride <= 0 || image_size % backbone_stride != 0) {
      throw ContractError("ModelConfig: image_size must be divisible by backbone_stride");
    }
    if ((backbone_stride & (backbone_stride - 1)) != 0 || backbone_stride < 2) {
      throw ContractError("ModelConfig: backbone_stride must be a power of two >= 2");
    }
    if (dim % 4 != 0) throw ContractError("ModelConfig: dim must be divisible by 4");
    if (heads <= 0 || dim % heads != 0) {
      throw ContractError("ModelConfig: dim must be divisible by heads");
    }
    if (encoder_layers < 1 || decoder_layers < 1 || t_max < 1) {
      throw ContractError("ModelConfig: encoder_layers, decoder_layers, t_max must be >= 1");
    }
    if (num_categories < 2) throw ContractError("ModelConfig: need at least 2 categories");
    if (vocab_size < 3) throw ContractError("ModelConfig: vocabulary too small");
    if (loss_weights.bce < 0 || loss_weights.l1 < 0 || loss_weights.giou < 0) {
      throw ContractError("ModelConfig: negative loss weight");
    }
  }
};

// Small stack of stride-2 convolutions + ReLU reaching the configured total
// stride; stands in for a full CNN backbone and is freezable as a unit.
template <typename S>
struct ToyBackbone {
  std::vector<Conv2dLayer<S>> convs;

  static ToyBackbone make(ParamStore<S>& store, const ModelConfig& cfg, RandomSource& rng) {
    ToyBackbone bb;
    int n_layers = 0;
    for (int s = cfg.backbone_stride; s > 1; s /= 2) ++n_layers;
    int in_ch = 3;
    for (int i = 0; i < n_layers; ++i) {
      const int out_ch = (i + 1 == n_layers)
                             ? cfg.backbone_channels
                             : std::max(4, cfg.backbone_channels >> (n_layers - 1 - i));
      bb.convs.push_back(Conv2dLayer<S>::make(store, "backbone.conv" + std::to_string(i), in_ch,
                                              out_ch, 3, 2, 1, rng));
      in_ch = out_ch;
    }
    return bb;
  }

  Tensor<S> forward(const Tensor<S>& image) const {
    Tensor<S> x = image;
    for (const auto& conv : convs) x = relu(conv.forward(x));
    return x;
  }
};

template <typename S>
struct EncoderLayer {
  MultiHeadAttention<S> attn;
  LayerNormBlock<S> ln_attn, ln_ffn;
  FeedForward<S> ffn;
  bool norm_after_ffn = true;

  static EncoderLayer make(ParamStore<S>& store, const std::string& name, const ModelConfig& cfg,
                           RandomSource& rng) {
    EncoderLayer l;
    l.attn = MultiHeadAttention<S>::make(store, name + ".self_attn", cfg.dim, cfg.heads, rng);
    l.ln_attn = LayerNormBlock<S>::make(store, name + ".ln_attn", cfg.dim);
    l.ln_ffn = LayerNormBlock<S>::make(store, name + ".ln_ffn", cfg.dim);
    l.ffn = FeedForward<S>::make(store, name + ".ffn", cfg.dim, cfg.ffn_hidden, rng);
    l.norm_after_ffn = cfg.norm_after_ffn;
    return l;
  }

  // F_next = F + FFN(F + MHSA(F)), normalized after the attention sub-block
  // and (optionally) after the FFN sub-block.
  Tensor<S> forward(const Tensor<S>& x, AttentionTrace<S>* trace, int layer_index) const {
    Tensor<S> attended =
        attn.forward(x, x, x, nullptr, trace, layer_index, AttnRole::self_visual);
    Tensor<S> inner = ln_attn.forward(add(x, attended));
    Tensor<S> out = add(x, ffn.forward(inner));
    return norm_after_ffn ? ln_ffn.forward(out) : out;
  }
};

template <typename S>
struct DecoderLayer {
  MultiHeadAttention<S> self_attn, cross_attn;
  LayerNormBlock<S> ln_self, ln_cross, ln_ffn;
  FeedForward<S> ffn;
  bool norm_after_ffn = true;

  static DecoderLayer make(ParamStore<S>& store, const std::string& name, const ModelConfig& cfg,
                           RandomSource& rng) {
    DecoderLayer l;
    l.self_attn = MultiHeadAttention<S>::make(store, name + ".self_attn", cfg.dim, cfg.heads, rng);
    l.cross_attn = MultiHeadAttention<S>::make(store, name + ".cross_attn", cfg.dim, cfg.heads, rng);
    l.ln_self = LayerNormBlock<S>::make(store, name + ".ln_self", cfg.dim);
    l.ln_cross = LayerNormBlock<S>::make(store, name + ".ln_cross", cfg.dim);
    l.ln_ffn = LayerNormBlock<S>::make(store, name + ".ln_ffn", cfg.dim);
    l.ffn = FeedForward<S>::make(store, name + ".ffn", cfg.dim, cfg.ffn_hidden, rng);
    l.norm_after_ffn = cfg.norm_after_ffn;
    return l;
  }

  // F_hat  = LN(F + MHSA(F))           (self-attention over words, pads masked)
  // inner  = LN(F + MHCA(F_hat, mem))  (word-to-pixel cross attention)
  // F_next = F + FFN(inner)            (residual from F, as the layer update
  //                                     is defined; optionally normalized)
  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& memory,
                    const std::vector<uint8_t>* pad_mask, AttentionTrace<S>* trace,
                    int layer_index) const {
    Tensor<S> self_out =
        self_attn.forward(x, x, x, pad_mask, trace, layer_index, AttnRole::self_textual);
    Tensor<S> x_hat = ln_self.forward(add(x, self_out));
    Tensor<S> cross_out =
        cross_attn.forward(x_hat, memory, memory, nullptr, trace, layer_index, AttnRole::cross);
    Tensor<S> inner = ln_cross.forward(add(x, cross_out));
    Tensor<S> out = add(x, ffn.forward(inner));
    return norm_after_ffn ? ln_ffn.forward(out) : out;
  }
};

// Box regression (2-layer MLP with ReLU, sigmoid-bounded center format) plus
// single linear layers for category and attribute logits.
template <typename S>
struct PredictionHeads {
  Linear<S> box_fc1, box_fc2;
  Linear<S> category;
  Linear<S> attribute;

  static PredictionHeads make(ParamStore<S>& store, const ModelConfig& cfg, RandomSource& rng) {
    PredictionHeads h;
    h.box_fc1 = Linear<S>::make(store, "heads.box.fc1", cfg.dim, cfg.dim, rng);
    h.box_fc2 = Linear<S>::make(store, "heads.box.fc2", cfg.dim, 4, rng);
    h.category = Linear<S>::make(store, "heads.category", cfg.dim, cfg.num_categories, rng);
    h.attribute = Linear<S>::make(store, "heads.attribute", cfg.dim, cfg.num_attributes, rng);
    return h;
  }

  struct Out {
    Tensor<S> box;               // [1,4] (cx, cy, w, h), sigmoid-bounded
    Tensor<S> category_logits;   // [1,Nc]
    Tensor<S> attribute_logits;  // [1,Na]
  };

  Out forward(const Tensor<S>& cls_feature) const {
    Out o;
    o.box = sigmoid(box_fc2.forward(relu(box_fc1.forward(cls_feature))));
    o.category_logits = category.forward(cls_feature);
    o.attribute_logits = attribute.forward(cls_feature);
    return o;
  }
};

// The full grounding network: toy backbone -> flatten + project + sine
// positions -> encoder stack -> word embeddings + learned positions ->
// decoder stack with word-to-pixel cross attention -> [CLS]-fed heads.
template <typename S>
class GroundingModelT {
 public:
  struct Output {
    Tensor<S> box;
    Tensor<S> category_logits;
    Tensor<S> attribute_logits;
    Tensor<S> cls_feature;
  };

  GroundingModelT(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RandomSource rng(mix_seed(seed, 0x6d6f64656cULL));
    backbone_ = ToyBackbone<S>::make(store_, cfg_, rng);
    input_proj_ = Linear<S>::make(store_, "input_proj", cfg_.backbone_channels, cfg_.dim, rng);
    pos_visual_ = sine_positional_grid<S>(cfg_.grid(), cfg_.grid(), cfg_.dim);
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
      encoder_.push_back(EncoderLayer<S>::make(store_, "encoder." + std::to_string(i), cfg_, rng));
    }
    Tensor<S> embed(Shape{cfg_.vocab_size, cfg_.dim});
    normal_init(embed, 0.02, rng);
    word_embed_ = store_.add("embed.words", embed);
    Tensor<S> pos(Shape{cfg_.t_max + 1, cfg_.dim});
    normal_init(pos, 0.02, rng);
    pos_text_ = store_.add("embed.pos", pos);
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      decoder_.push_back(DecoderLayer<S>::make(store_, "decoder." + std::to_string(i), cfg_, rng));
    }
    heads_ = PredictionHeads<S>::make(store_, cfg_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }
  const Tensor<S>& word_embedding() const { return word_embed_; }
  const Tensor<S>& text_positions() const { return pos_text_; }
  const Tensor<S>& visual_positions() const { return pos_visual_; }
  const ToyBackbone<S>& backbone() const { return backbone_; }

  // Backbone + projection + sine positions: F_v^0 as a (h*w) x D sequence.
  Tensor<S> encode_visual_input(const Tensor<S>& image) const {
    if (image.ndim() != 3 || image.dim(0) != cfg_.image_size || image.dim(1) != cfg_.image_size ||
        image.dim(2) != 3) {
      throw ShapeError("grounding model: image must be [" + std::to_string(cfg_.image_size) + "," +
                       std::to_string(cfg_.image_size) + ",3]");
    }
    Tensor<S> fmap = backbone_.forward(image);
    Tensor<S> seq = reshape(fmap, Shape{cfg_.visual_len(), cfg_.backbone_channels});
    return add(input_proj_.forward(seq), pos_visual_);
  }

  Tensor<S> encoder_stack(const Tensor<S>& f_v0, AttentionTrace<S>* trace = nullptr) const {
    Tensor<S> x = f_v0;
    for (size_t i = 0; i < encoder_.size(); ++i) {
      x = encoder_[i].forward(x, trace, static_cast<int>(i));
    }
    return x;
  }

  // F_l^0 = word embeddings + learned positional rows; index 0 is [CLS].
  Tensor<S> embed_tokens(const TokenSequence& tokens) const {
    if (tokens.capacity() != cfg_.t_max + 1) {
      throw ShapeError("embed_tokens: token buffer must have length t_max+1");
    }
    return add(embedding_lookup(word_embed_, tokens.ids), pos_text_);
  }

  // Uniform mean over the true (unpadded) word embeddings. Accumulated in
  // vocabulary order so the result is exactly word-order invariant.
  Tensor<S> sentence_pool(const TokenSequence& tokens) const {
    const int t = tokens.true_len - 1;
    if (t < 1) throw ContractError("sentence_pool: empty sentence");
    std::vector<S> counts(static_cast<size_t>(cfg_.vocab_size), S(0));
    for (int i = 1; i < tokens.true_len; ++i) {
      counts[static_cast<size_t>(tokens.ids[static_cast<size_t>(i)])] += S(1) / static_cast<S>(t);
    }
    Tensor<S> weights(Shape{1, cfg_.vocab_size}, std::move(counts));
    return matmul(weights, word_embed_);
  }

  Tensor<S> decoder_stack(const Tensor<S>& f_l0, const Tensor<S>& memory,
                          const std::vector<uint8_t>* pad_mask,
                          AttentionTrace<S>* trace = nullptr) const {
    Tensor<S> x = f_l0;
    for (size_t i = 0; i < decoder_.size(); ++i) {
      x = decoder_[i].forward(x, memory, pad_mask, trace, static_cast<int>(i));
    }
    return x;
  }

  typename PredictionHeads<S>::Out predict_heads(const Tensor<S>& cls_feature) const {
    return heads_.forward(cls_feature);
  }

  Output forward(const Tensor<S>& image, const TokenSequence& tokens,
                 AttentionTrace<S>* trace = nullptr) const {
    Tensor<S> memory = encoder_stack(encode_visual_input(image), trace);

    Tensor<S> f_l0;
    const std::vector<uint8_t>* pad_mask = nullptr;
    if (cfg_.query_mode == QueryMode::word_level) {
      f_l0 = embed_tokens(tokens);
      pad_mask = &tokens.pad;
    } else {
      Tensor<S> cls_row = add(embedding_lookup(word_embed_, {kTokCls}),
                              slice_rows(pos_text_, 0, 1));
      f_l0 = concat<S>({cls_row, sentence_pool(tokens)}, 0);
    }

    Tensor<S> f_ln = decoder_stack(f_l0, memory, pad_mask, trace);
    Tensor<S> cls_feature = slice_rows(f_ln, 0, 1);
    auto head_out = heads_.forward(cls_feature);
    return Output{head_out.box, head_out.category_logits, head_out.attribute_logits, cls_feature};
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> store_;
  ToyBackbone<S> backbone_;
  Linear<S> input_proj_;
  Tensor<S> pos_visual_;
  std::vector<EncoderLayer<S>> encoder_;
  Tensor<S> word_embed_;
  Tensor<S> pos_text_;
  std::vector<DecoderLayer<S>> decoder_;
  PredictionHeads<S> heads_;
};

using GroundingModel = GroundingModelT<float>;

// Box tensor ([1,4] or [4]) to geometry type.
template <typename S>
BoundingBox to_bounding_box(const Tensor<S>& box) {
  if (box.size() != 4) throw ShapeError("to_bounding_box: need 4 components");
  return BoundingBox{static_cast<double>(box.data()[0]), static_cast<double>(box.data()[1]),
                     static_cast<double>(box.data()[2]), static_cast<double>(box.data()[3])};
}

}  // namespace grounder
