#pragma once

#include <string>
#include <vector>

#include "grounder/model.hpp"
#include "grounder/synthbench.hpp"

namespace grounder {

struct AttnDumpResult {
  int maps_written = 0;
  std::string index_path;
  std::string raw_path;
};

// Runs one recorded forward pass and writes, for every decoder layer, head
// and true token (pads excluded), an h x w grayscale portable graymap with
// per-map min-max normalization, plus head-averaged maps, a line-delimited
// index mapping filenames to {layer, head, token}, and the raw weights for
// exact numeric checks. A constant map normalizes to all zeros.
AttnDumpResult dump_attention(const GroundingModel& model, const synth::SampleRecord& rec,
                              const synth::GenConfig& data_cfg, const std::string& out_dir);

// P2 (ASCII) graymap with values min-max scaled to 0..255.
void write_pgm(const std::string& path, const std::vector<float>& values, int height, int width);

}  // namespace grounder
