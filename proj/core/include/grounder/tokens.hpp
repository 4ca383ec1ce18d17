#pragma once

#include <cstdint>
#include <vector>

namespace grounder {

// Reserved vocabulary ids.
constexpr int kTokCls = 0;
constexpr int kTokPad = 1;
constexpr int kTokUnk = 2;

// Fixed-length token buffer for one query: ids[0] is [CLS], ids beyond
// true_len are [PAD]. pad[i] marks the padded tail; [CLS] is never masked.
struct TokenSequence {
  std::vector<int> ids;       // length t_max + 1
  int true_len = 1;           // words + [CLS]
  std::vector<uint8_t> pad;   // length t_max + 1

  int capacity() const { return static_cast<int>(ids.size()); }
};

}  // namespace grounder
