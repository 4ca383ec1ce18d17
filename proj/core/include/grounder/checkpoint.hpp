#pragma once

#include <cstdint>
#include <string>

#include "grounder/optimizer.hpp"
#include "grounder/param.hpp"

namespace grounder {

// Portable binary checkpoint: fixed magic + format version, the model config
// hash, a named tensor table (dotted name, shape, little-endian float32
// payload), and an optional optimizer-state section. Round-trips are bitwise.
struct CheckpointMeta {
  uint32_t version = 0;
  uint64_t config_hash = 0;
  bool has_optimizer = false;
};

void save_checkpoint(const ParamStore<float>& store, uint64_t config_hash,
                     const std::string& path, AdamW<float>* optimizer = nullptr);

// Reads the header without touching the tensor table.
CheckpointMeta peek_checkpoint(const std::string& path);

// Loads parameters by name into an existing store (shapes must match).
// A config-hash mismatch is an error unless allow_hash_mismatch; the
// optimizer section is skipped when `optimizer` is null (partial load).
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<float>* store,
                               uint64_t expected_config_hash, bool allow_hash_mismatch = false,
                               AdamW<float>* optimizer = nullptr);

}  // namespace grounder
