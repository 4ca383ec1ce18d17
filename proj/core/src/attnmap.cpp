#include "grounder/attnmap.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace grounder {

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

void atomic_write_text(const fs::path& path, const std::string& payload) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IntegrityError("cannot open for writing: " + tmp.string());
    f << payload;
  }
  fs::rename(tmp, path);
}

std::string pgm_payload(const std::vector<float>& values, int height, int width) {
  if (static_cast<int>(values.size()) != height * width) {
    throw ShapeError("write_pgm: value count does not match dimensions");
  }
  float lo = values[0], hi = values[0];
  for (float v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi - lo;
  std::string out = "P2\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const float v = values[static_cast<size_t>(r) * width + c];
      const int g = span > 0 ? static_cast<int>(std::lround((v - lo) / span * 255.0f)) : 0;
      out += std::to_string(g);
      out.push_back(c + 1 == width ? '\n' : ' ');
    }
  }
  return out;
}

std::string map_filename(int layer, int head, int token, const std::string& word) {
  char buf[96];
  if (head >= 0) {
    std::snprintf(buf, sizeof(buf), "layer%d_head%d_tok%02d_%s.pgm", layer, head, token,
                  word.c_str());
  } else {
    std::snprintf(buf, sizeof(buf), "layer%d_headavg_tok%02d_%s.pgm", layer, token, word.c_str());
  }
  return buf;
}

}  // namespace

void write_pgm(const std::string& path, const std::vector<float>& values, int height, int width) {
  atomic_write_text(path, pgm_payload(values, height, width));
}

AttnDumpResult dump_attention(const GroundingModel& model, const synth::SampleRecord& rec,
                              const synth::GenConfig& data_cfg, const std::string& out_dir) {
  const ModelConfig& mc = model.config();
  const auto& vocab = synth::Vocabulary::builtin();
  const Tensor<float> image = synth::render_sample(rec, data_cfg);
  const TokenSequence toks = synth::tokenize(rec.words, vocab, mc.t_max);

  AttentionTrace<float> trace;
  (void)model.forward(image, toks, &trace);
  const auto cross = trace.cross_records();
  if (cross.empty()) throw ContractError("attn-dump: forward pass recorded no cross attention");

  fs::create_directories(out_dir);
  const int grid = mc.grid();
  const int heads = mc.heads;
  const int layers = mc.decoder_layers;

  std::string index_lines, raw_lines;
  AttnDumpResult result;

  auto token_word = [&](int t) {
    return t == 0 ? std::string("CLS") : vocab.word_of(toks.ids[static_cast<size_t>(t)]);
  };

  for (int layer = 0; layer < layers; ++layer) {
    // Collect this layer's per-head records in head order.
    std::vector<const AttentionRecord<float>*> layer_recs;
    for (const auto* r : cross) {
      if (r->layer == layer) layer_recs.push_back(r);
    }
    if (static_cast<int>(layer_recs.size()) != heads) {
      throw ContractError("attn-dump: expected one cross record per head");
    }
    for (int t = 0; t < toks.true_len; ++t) {
      std::vector<float> avg(static_cast<size_t>(grid) * grid, 0.0f);
      for (int h = 0; h < heads; ++h) {
        const auto* r = layer_recs[static_cast<size_t>(h)];
        if (r->key_len != grid * grid) {
          throw ShapeError("attn-dump: record key length does not match the visual grid");
        }
        std::vector<float> map(static_cast<size_t>(grid) * grid);
        for (int k = 0; k < grid * grid; ++k) {
          map[static_cast<size_t>(k)] = r->at(t, k);
          avg[static_cast<size_t>(k)] += r->at(t, k) / static_cast<float>(heads);
        }
        const std::string file = map_filename(layer, h, t, token_word(t));
        write_pgm((fs::path(out_dir) / file).string(), map, grid, grid);
        ++result.maps_written;
        index_lines += json{{"file", file},
                            {"layer", layer},
                            {"head", h},
                            {"token_index", t},
                            {"token", token_word(t)}}
                           .dump() +
                       "\n";
        raw_lines += json{{"layer", layer},
                          {"head", h},
                          {"token_index", t},
                          {"weights", map}}
                         .dump() +
                     "\n";
      }
      const std::string file = map_filename(layer, -1, t, token_word(t));
      write_pgm((fs::path(out_dir) / file).string(), avg, grid, grid);
      ++result.maps_written;
      index_lines += json{{"file", file},
                          {"layer", layer},
                          {"head", -1},
                          {"token_index", t},
                          {"token", token_word(t)}}
                         .dump() +
                     "\n";
    }
  }

  const fs::path index_path = fs::path(out_dir) / "index.jsonl";
  const fs::path raw_path = fs::path(out_dir) / "raw_weights.jsonl";
  atomic_write_text(index_path, index_lines);
  atomic_write_text(raw_path, raw_lines);
  result.index_path = index_path.string();
  result.raw_path = raw_path.string();
  return result;
}

}  // namespace grounder
