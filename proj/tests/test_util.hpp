#pragma once

#include "grounder/model.hpp"
#include "grounder/random.hpp"
#include "grounder/synthbench.hpp"

namespace grounder::testutil {

// Smallest full-featured model: 3x3 visual grid, D=8, M=N=1, T_max=4.
inline ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.image_size = 24;
  cfg.backbone_stride = 8;
  cfg.backbone_channels = 8;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.ffn_hidden = 16;
  cfg.t_max = 4;
  return cfg;
}

template <typename S>
Tensor<S> random_tensor(Shape shape, RandomSource& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

inline TokenSequence tokens_of(const std::vector<std::string>& words, int t_max) {
  return synth::tokenize(words, synth::Vocabulary::builtin(), t_max);
}

// Reduced generation config for fast split building in tests.
inline synth::GenConfig small_data_config(int train = 48, int val = 16, int test = 16,
                                          int pairs = 4) {
  synth::GenConfig g;
  g.train_count = train;
  g.val_count = val;
  g.test_count = test;
  g.swap_pairs = pairs;
  return g;
}

}  // namespace grounder::testutil
