#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grounder/model.hpp"
#include "grounder/synthbench.hpp"

namespace grounder {

enum class FreezeMode { end_to_end, backbone, backbone_encoder };

FreezeMode freeze_mode_from_string(const std::string& s);
std::string freeze_mode_to_string(FreezeMode m);

struct TrainSchedule {
  int total_steps = 6000;
  int freeze_steps = -1;   // -1: 10% of total_steps
  FreezeMode freeze_mode = FreezeMode::end_to_end;
  int batch_size = 8;
  double lr = 1e-3;            // transformer group
  double lr_backbone = 1e-4;   // backbone group (10:1 ratio preserved)
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;      // 0 disables
  int decay_step = -1;         // -1: 80% of total_steps
  double decay_factor = 0.1;
  int eval_interval = 250;
  double early_stop_val_accuracy = 0.0;  // 0 disables
  uint64_t seed = 42;

  int resolved_freeze_steps() const {
    return freeze_steps >= 0 ? freeze_steps : total_steps / 10;
  }
  int resolved_decay_step() const {
    return decay_step >= 0 ? decay_step : (total_steps * 8) / 10;
  }
  void validate() const {
    if (total_steps < 1 || batch_size < 1) {
      throw ContractError("TrainSchedule: total_steps and batch_size must be >= 1");
    }
    if (resolved_freeze_steps() > total_steps) {
      throw ContractError("TrainSchedule: freeze_steps exceeds total_steps");
    }
    if (resolved_decay_step() > total_steps) {
      throw ContractError("TrainSchedule: decay_step exceeds total_steps");
    }
  }
};

// Everything one run needs, parsed from a flat-key config file
// ("section.key = value" lines); command-line overrides take precedence.
struct RunConfig {
  ModelConfig model;
  TrainSchedule train;
  synth::GenConfig data;
};

// Parses "key = value". Unknown keys are rejected.
void apply_config_line(RunConfig* cfg, const std::string& key, const std::string& value);

// Reads a config file; '#' starts a comment. Throws ConfigError on unknown
// keys or malformed lines.
RunConfig parse_config_file(const std::string& path);

// Applies a "key=value" override string.
void apply_override(RunConfig* cfg, const std::string& assignment);

// Canonical serialization: every key in sorted order, one per line. Two
// configs serialize identically iff they are identical.
std::string serialize_config(const RunConfig& cfg);

// All known keys with current values and one-line docs, for --help-config.
std::string describe_config_keys();

// FNV-1a over the canonical serialization of the model section only; the
// checkpoint compatibility token.
uint64_t model_config_hash(const ModelConfig& model);

// FNV-1a over the full canonical serialization.
uint64_t run_config_hash(const RunConfig& cfg);

}  // namespace grounder
