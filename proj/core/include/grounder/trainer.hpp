#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grounder/config.hpp"
#include "grounder/model.hpp"
#include "grounder/synthbench.hpp"

namespace grounder {

struct EvalReport {
  double accuracy = 0;  // IoU > 0.5
  double mean_iou = 0;
  std::map<std::string, double> per_relation_accuracy;
  double swap_consistency = -1;  // pairs with both sides correct; -1 when unpaired
  double pairs_differ = -1;      // pairs whose two predicted boxes differ
  double loss_total = 0, loss_ce = 0, loss_bce = 0, loss_l1 = 0, loss_giou = 0;
  int count = 0;
};

// One evaluated sample, decoupled from the model so metric logic can be
// tested against stub predictors.
struct EvalItem {
  BoundingBox predicted;
  BoundingBox truth;
  synth::Relation relation = synth::Relation::none;
  int swap_pair = -1;
  int swap_side = -1;
  double loss_total = 0, loss_ce = 0, loss_bce = 0, loss_l1 = 0, loss_giou = 0;
};

// Pure summary of per-sample results; repeated calls give identical reports.
EvalReport evaluate_items(const std::vector<EvalItem>& items);

// Forward the model over records (re-rendered from their seeds) and
// summarize. Loss terms use the model's configured weights.
EvalReport evaluate_model(const GroundingModel& model,
                          const std::vector<synth::SampleRecord>& records,
                          const synth::GenConfig& data_cfg,
                          const LossToggles& toggles = {});

struct TrainResult {
  EvalReport best_val;
  int best_step = -1;
  EvalReport final_val;
  int steps_run = 0;
  double seconds = 0;
};

// Deterministic single-threaded training loop: seeded shuffling, batch-mean
// loss, optional global-norm clipping, AdamW with two lr groups, warm
// freeze, step decay, periodic validation with best-checkpoint retention
// (the model holds the best-val parameters on return). A NaN loss aborts
// with the offending batch seeds in the error message.
TrainResult train_model(GroundingModel& model, const synth::DatasetBundle& data,
                        const TrainSchedule& sched, const LossToggles& toggles = {},
                        const std::string& metrics_path = "");

struct AblationArm {
  std::string name;
  RunConfig config;
};

struct AblationRow {
  std::string arm;
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  EvalReport test;
  EvalReport relation_subset;  // test samples whose expression has a relation
  EvalReport swap;
};

struct AblationTable {
  std::string suite;
  std::vector<AblationRow> rows;
  // Mean test accuracy per arm over seeds (failed rows excluded).
  std::map<std::string, double> arm_accuracy;
  std::map<std::string, double> arm_relation_accuracy;
  std::map<std::string, double> arm_swap_consistency;
};

std::vector<AblationArm> ablation_arms(const std::string& suite, const RunConfig& base);

// Trains every arm under the identical schedule/seed set and evaluates on
// the test split (plus relation-critical subset and swap split). Per-arm
// failures are recorded without aborting siblings.
AblationTable run_ablation(const std::string& suite, const RunConfig& base,
                           const synth::DatasetBundle& data, int num_seeds,
                           const std::string& out_dir = "");

// Subset of records whose expression contains a relation word.
std::vector<synth::SampleRecord> relation_subset(const std::vector<synth::SampleRecord>& records);

void write_ablation_table(const AblationTable& table, const std::string& out_dir);

}  // namespace grounder
