#include "grounder/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "grounder/optimizer.hpp"
#include "grounder/tape.hpp"
#include "json.hpp"

namespace grounder {

using nlohmann::json;

namespace {

// Two predicted boxes count as distinct when any coordinate moves by more
// than 1% of the image extent.
constexpr double kPairDifferEps = 0.01;

double box_linf(const BoundingBox& a, const BoundingBox& b) {
  return std::max({std::abs(a.cx - b.cx), std::abs(a.cy - b.cy), std::abs(a.w - b.w),
                   std::abs(a.h - b.h)});
}

}  // namespace

EvalReport evaluate_items(const std::vector<EvalItem>& items) {
  EvalReport rep;
  rep.count = static_cast<int>(items.size());
  if (items.empty()) throw ContractError("evaluate: empty split");

  std::map<std::string, std::pair<int, int>> rel_counts;  // relation -> (hits, total)
  std::map<int, std::vector<const EvalItem*>> pairs;
  int hits = 0;
  for (const auto& it : items) {
    const double v = iou(it.predicted, it.truth);
    const bool correct = v > 0.5;
    hits += correct ? 1 : 0;
    rep.mean_iou += v;
    auto& rc = rel_counts[synth::relation_name(it.relation)];
    rc.first += correct ? 1 : 0;
    rc.second += 1;
    rep.loss_total += it.loss_total;
    rep.loss_ce += it.loss_ce;
    rep.loss_bce += it.loss_bce;
    rep.loss_l1 += it.loss_l1;
    rep.loss_giou += it.loss_giou;
    if (it.swap_pair >= 0) pairs[it.swap_pair].push_back(&it);
  }
  const double n = static_cast<double>(items.size());
  rep.accuracy = hits / n;
  rep.mean_iou /= n;
  rep.loss_total /= n;
  rep.loss_ce /= n;
  rep.loss_bce /= n;
  rep.loss_l1 /= n;
  rep.loss_giou /= n;
  for (const auto& [name, counts] : rel_counts) {
    rep.per_relation_accuracy[name] =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  if (!pairs.empty()) {
    int both = 0, differ = 0, total = 0;
    for (const auto& [id, members] : pairs) {
      if (members.size() != 2) continue;
      ++total;
      const bool a_ok = iou(members[0]->predicted, members[0]->truth) > 0.5;
      const bool b_ok = iou(members[1]->predicted, members[1]->truth) > 0.5;
      both += (a_ok && b_ok) ? 1 : 0;
      differ += box_linf(members[0]->predicted, members[1]->predicted) > kPairDifferEps ? 1 : 0;
    }
    if (total > 0) {
      rep.swap_consistency = static_cast<double>(both) / total;
      rep.pairs_differ = static_cast<double>(differ) / total;
    }
  }
  return rep;
}

EvalReport evaluate_model(const GroundingModel& model,
                          const std::vector<synth::SampleRecord>& records,
                          const synth::GenConfig& data_cfg, const LossToggles& toggles) {
  const auto& vocab = synth::Vocabulary::builtin();
  const ModelConfig& mc = model.config();
  std::vector<EvalItem> items;
  items.reserve(records.size());
  for (const auto& rec : records) {
    const Tensor<float> image = synth::render_sample(rec, data_cfg);
    const TokenSequence toks = synth::tokenize(rec.words, vocab, mc.t_max);
    const auto out = model.forward(image, toks);
    const TargetLabels target = rec.target();
    const auto loss = total_loss(out.category_logits, out.attribute_logits, out.box, target,
                                 mc.loss_weights, toggles);
    EvalItem it;
    it.predicted = to_bounding_box(out.box);
    it.truth = rec.box;
    it.relation = rec.relation;
    it.swap_pair = rec.swap_pair;
    it.swap_side = rec.swap_side;
    it.loss_total = static_cast<double>(loss.total.item());
    it.loss_ce = loss.ce;
    it.loss_bce = loss.bce;
    it.loss_l1 = loss.l1;
    it.loss_giou = loss.giou;
    items.push_back(it);
  }
  return evaluate_items(items);
}

namespace {

json report_to_json(const EvalReport& r) {
  json j{{"accuracy", r.accuracy},
         {"mean_iou", r.mean_iou},
         {"count", r.count},
         {"loss_total", r.loss_total},
         {"loss_ce", r.loss_ce},
         {"loss_bce", r.loss_bce},
         {"loss_l1", r.loss_l1},
         {"loss_giou", r.loss_giou}};
  j["per_relation"] = r.per_relation_accuracy;
  if (r.swap_consistency >= 0) j["swap_consistency"] = r.swap_consistency;
  if (r.pairs_differ >= 0) j["pairs_differ"] = r.pairs_differ;
  return j;
}

struct ParamSnapshot {
  std::vector<std::vector<float>> values;

  static ParamSnapshot take(const ParamStore<float>& store) {
    ParamSnapshot s;
    for (const auto& p : store.items()) s.values.push_back(p.tensor.vec());
    return s;
  }

  void restore(ParamStore<float>& store) const {
    for (size_t i = 0; i < values.size(); ++i) store.at(i).tensor.vec() = values[i];
  }
};

void apply_freeze(ParamStore<float>& store, FreezeMode mode, bool warm_active) {
  store.set_frozen("backbone.", false);
  store.set_frozen("encoder.", false);
  store.set_frozen("input_proj.", false);
  const bool freeze_backbone = warm_active || mode != FreezeMode::end_to_end;
  const bool freeze_encoder = warm_active || mode == FreezeMode::backbone_encoder;
  if (freeze_backbone) store.set_frozen("backbone.", true);
  if (freeze_encoder) {
    store.set_frozen("encoder.", true);
    store.set_frozen("input_proj.", true);
  }
}

}  // namespace

TrainResult train_model(GroundingModel& model, const synth::DatasetBundle& data,
                        const TrainSchedule& sched, const LossToggles& toggles,
                        const std::string& metrics_path) {
  sched.validate();
  if (data.train.empty()) throw ContractError("train: empty train split");
  const auto t_start = std::chrono::steady_clock::now();

  const ModelConfig& mc = model.config();
  const auto& vocab = synth::Vocabulary::builtin();
  AdamWConfig opt_cfg;
  opt_cfg.beta1 = sched.beta1;
  opt_cfg.beta2 = sched.beta2;
  opt_cfg.eps = sched.eps;
  opt_cfg.weight_decay = sched.weight_decay;
  AdamW<float> opt(model.params(), opt_cfg);

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    namespace fs = std::filesystem;
    const fs::path p(metrics_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    metrics.open(metrics_path, std::ios::app | std::ios::binary);
    if (!metrics) throw ContractError("train: cannot open metrics log " + metrics_path);
  }

  RandomSource shuffle_rng(mix_seed(sched.seed, 0x747261696eULL));
  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // forces an initial shuffle
  uint64_t epoch = 0;

  const int freeze_steps = sched.resolved_freeze_steps();
  const int decay_step = sched.resolved_decay_step();

  TrainResult result;
  ParamSnapshot best;
  bool have_best = false;
  double train_loss_acc = 0, ce_acc = 0, bce_acc = 0, l1_acc = 0, giou_acc = 0;
  int acc_steps = 0;

  auto run_eval = [&](int step) {
    EvalReport val = evaluate_model(model, data.val, data.config, toggles);
    if (metrics.is_open()) {
      json train_line{{"step", step},
                      {"split", "train"},
                      {"loss_total", acc_steps ? train_loss_acc / acc_steps : 0.0},
                      {"loss_ce", acc_steps ? ce_acc / acc_steps : 0.0},
                      {"loss_bce", acc_steps ? bce_acc / acc_steps : 0.0},
                      {"loss_l1", acc_steps ? l1_acc / acc_steps : 0.0},
                      {"loss_giou", acc_steps ? giou_acc / acc_steps : 0.0}};
      metrics << train_line.dump() << '\n';
      json val_line = report_to_json(val);
      val_line["step"] = step;
      val_line["split"] = "val";
      metrics << val_line.dump() << '\n';
      metrics.flush();
    }
    train_loss_acc = ce_acc = bce_acc = l1_acc = giou_acc = 0;
    acc_steps = 0;
    if (!have_best || val.accuracy > result.best_val.accuracy) {
      best = ParamSnapshot::take(model.params());
      have_best = true;
      result.best_val = val;
      result.best_step = step;
    }
    return val;
  };

  for (int step = 0; step < sched.total_steps; ++step) {
    const bool warm = step < freeze_steps;
    apply_freeze(model.params(), sched.freeze_mode, warm);
    const double decay = step >= decay_step ? sched.decay_factor : 1.0;
    const double lr = sched.lr * decay;
    const double lr_backbone = sched.lr_backbone * decay;

    // Assemble the batch (seeded shuffling, epoch by epoch).
    std::vector<const synth::SampleRecord*> batch;
    std::vector<uint64_t> batch_seeds;
    for (int b = 0; b < sched.batch_size; ++b) {
      if (cursor >= order.size()) {
        RandomSource epoch_rng = shuffle_rng.fork(++epoch);
        for (size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<size_t>(epoch_rng.uniform_int(
                                      0, static_cast<int>(i) - 1))]);
        }
        cursor = 0;
      }
      const auto& rec = data.train[order[cursor++]];
      batch.push_back(&rec);
      batch_seeds.push_back(rec.scene_seed);
    }

    model.params().zero_grads();
    const float inv_batch = 1.0f / static_cast<float>(batch.size());
    double step_loss = 0, step_ce = 0, step_bce = 0, step_l1 = 0, step_giou = 0;
    try {
      for (const auto* rec : batch) {
        const Tensor<float> image = synth::render_sample(*rec, data.config);
        const TokenSequence toks = synth::tokenize(rec->words, vocab, mc.t_max);
        Tape32 tape;
        Tape32::Scope scope(tape);
        const auto out = model.forward(image, toks);
        auto loss = total_loss(out.category_logits, out.attribute_logits, out.box, rec->target(),
                               mc.loss_weights, toggles);
        Tensor<float> scaled = scale(loss.total, inv_batch);
        tape.backward(scaled);
        step_loss += static_cast<double>(loss.total.item());
        step_ce += loss.ce;
        step_bce += loss.bce;
        step_l1 += loss.l1;
        step_giou += loss.giou;
      }
    } catch (const NumericError& e) {
      std::string seeds;
      for (uint64_t s : batch_seeds) seeds += " " + std::to_string(s);
      const std::string msg = std::string("training aborted at step ") + std::to_string(step) +
                              ": " + e.what() + "; batch scene seeds:" + seeds;
      if (metrics.is_open()) {
        metrics << json{{"step", step}, {"split", "abort"}, {"error", msg}}.dump() << '\n';
      }
      throw NumericError(msg);
    }

    clip_grad_norm(model.params(), sched.clip_norm);
    opt.step(lr, lr_backbone);

    const double nb = static_cast<double>(batch.size());
    train_loss_acc += step_loss / nb;
    ce_acc += step_ce / nb;
    bce_acc += step_bce / nb;
    l1_acc += step_l1 / nb;
    giou_acc += step_giou / nb;
    ++acc_steps;
    result.steps_run = step + 1;

    const bool last = step + 1 == sched.total_steps;
    if ((step + 1) % sched.eval_interval == 0 || last) {
      EvalReport val = run_eval(step + 1);
      if (sched.early_stop_val_accuracy > 0 && val.accuracy >= sched.early_stop_val_accuracy) {
        break;
      }
    }
  }

  // Leave the model holding the best-validation parameters, unfrozen.
  if (have_best) best.restore(model.params());
  apply_freeze(model.params(), FreezeMode::end_to_end, false);
  result.final_val = result.best_val;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

std::vector<synth::SampleRecord> relation_subset(
    const std::vector<synth::SampleRecord>& records) {
  std::vector<synth::SampleRecord> out;
  for (const auto& r : records) {
    if (r.relation != synth::Relation::none) out.push_back(r);
  }
  return out;
}

std::vector<AblationArm> ablation_arms(const std::string& suite, const RunConfig& base) {
  std::vector<AblationArm> arms;
  auto arm = [&](const std::string& name) {
    arms.push_back(AblationArm{name, base});
    return &arms.back().config;
  };
  if (suite == "word-vs-sentence") {
    arm("word")->model.query_mode = QueryMode::word_level;
    arm("sentence")->model.query_mode = QueryMode::sentence_pooled;
  } else if (suite == "decoder-depth") {
    arm("N1")->model.decoder_layers = 1;
    arm("N2")->model.decoder_layers = 2;
    arm("N3")->model.decoder_layers = 3;
  } else if (suite == "loss-terms") {
    arm("box-only");
    arm("box+ce");
    arm("box+bce");
    arm("box+ce+bce");
  } else if (suite == "freeze-modes") {
    arm("freeze_backbone_encoder")->train.freeze_mode = FreezeMode::backbone_encoder;
    arm("freeze_backbone")->train.freeze_mode = FreezeMode::backbone;
    arm("end_to_end")->train.freeze_mode = FreezeMode::end_to_end;
  } else {
    throw ContractError("unknown ablation suite '" + suite +
                        "' (word-vs-sentence | decoder-depth | loss-terms | freeze-modes)");
  }
  return arms;
}

namespace {

LossToggles toggles_for_arm(const std::string& suite, const std::string& arm) {
  LossToggles t;
  if (suite != "loss-terms") return t;
  t.ce = arm == "box+ce" || arm == "box+ce+bce";
  t.bce = arm == "box+bce" || arm == "box+ce+bce";
  return t;
}

}  // namespace

AblationTable run_ablation(const std::string& suite, const RunConfig& base,
                           const synth::DatasetBundle& data, int num_seeds,
                           const std::string& out_dir) {
  if (num_seeds < 1) throw ContractError("run_ablation: num_seeds must be >= 1");
  AblationTable table;
  table.suite = suite;
  const auto arms = ablation_arms(suite, base);
  std::map<std::string, std::vector<const AblationRow*>> per_arm;

  for (const auto& arm : arms) {
    for (int s = 0; s < num_seeds; ++s) {
      AblationRow row;
      row.arm = arm.name;
      row.seed = base.train.seed + static_cast<uint64_t>(s);
      try {
        const LossToggles toggles = toggles_for_arm(suite, arm.name);
        GroundingModel model(arm.config.model, row.seed);
        TrainSchedule sched = arm.config.train;
        sched.seed = row.seed;
        train_model(model, data, sched, toggles);
        row.test = evaluate_model(model, data.test, data.config, toggles);
        const auto rel = relation_subset(data.test);
        if (!rel.empty()) {
          row.relation_subset = evaluate_model(model, rel, data.config, toggles);
        }
        if (!data.swap_test.empty()) {
          row.swap = evaluate_model(model, data.swap_test, data.config, toggles);
        }
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
      table.rows.push_back(std::move(row));
    }
  }
  for (const auto& row : table.rows) {
    if (!row.failed) per_arm[row.arm].push_back(&row);
  }
  for (const auto& [name, rows] : per_arm) {
    double acc = 0, rel = 0, swap = 0;
    for (const auto* r : rows) {
      acc += r->test.accuracy;
      rel += r->relation_subset.accuracy;
      swap += r->swap.swap_consistency;
    }
    const double n = static_cast<double>(rows.size());
    table.arm_accuracy[name] = acc / n;
    table.arm_relation_accuracy[name] = rel / n;
    table.arm_swap_consistency[name] = swap / n;
  }
  if (!out_dir.empty()) write_ablation_table(table, out_dir);
  return table;
}

void write_ablation_table(const AblationTable& table, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / (table.suite + ".jsonl"), std::ios::binary);
    for (const auto& row : table.rows) {
      json j{{"suite", table.suite}, {"arm", row.arm}, {"seed", row.seed}};
      if (row.failed) {
        j["error"] = row.error;
      } else {
        j["test"] = report_to_json(row.test);
        if (row.relation_subset.count > 0) j["relation_subset"] = report_to_json(row.relation_subset);
        if (row.swap.count > 0) j["swap"] = report_to_json(row.swap);
      }
      f << j.dump() << '\n';
    }
    for (const auto& [name, acc] : table.arm_accuracy) {
      json j{{"suite", table.suite},
             {"arm", name},
             {"summary", true},
             {"mean_test_accuracy", acc},
             {"mean_relation_accuracy", table.arm_relation_accuracy.at(name)},
             {"mean_swap_consistency", table.arm_swap_consistency.at(name)}};
      f << j.dump() << '\n';
    }
  }
  {
    std::ofstream f(fs::path(out_dir) / (table.suite + ".txt"));
    f << "suite: " << table.suite << "\n";
    f << "arm                         acc@0.5   relation   swap\n";
    for (const auto& [name, acc] : table.arm_accuracy) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%-26s  %7.4f   %8.4f   %6.4f\n", name.c_str(), acc,
                    table.arm_relation_accuracy.at(name), table.arm_swap_consistency.at(name));
      f << buf;
    }
    for (const auto& row : table.rows) {
      if (row.failed) f << "FAILED arm " << row.arm << " seed " << row.seed << ": " << row.error
                        << "\n";
    }
  }
}

}  // namespace grounder
