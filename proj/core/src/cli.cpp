#include "grounder/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grounder/attnmap.hpp"
#include "grounder/checkpoint.hpp"
#include "grounder/config.hpp"
#include "grounder/trainer.hpp"
#include "grounder/version.hpp"
#include "json.hpp"

namespace grounder {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig load_run_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = parse_config_file(opts.config_path);
  for (const auto& ov : opts.overrides) apply_override(&cfg, ov);
  cfg.model.validate();
  cfg.data.validate();
  return cfg;
}

// Effective config and version stamp land in the output directory before any
// compute, so every run is reconstructible.
void write_run_preamble(const std::string& out_dir, const RunConfig& cfg,
                        const std::string& command) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "config.txt", std::ios::binary);
    f << serialize_config(cfg);
  }
  {
    std::ofstream f(fs::path(out_dir) / "run.json", std::ios::binary);
    f << json{{"version", kVersion},
              {"command", command},
              {"run_config_hash", run_config_hash(cfg)},
              {"model_config_hash", model_config_hash(cfg.model)}}
             .dump()
      << '\n';
  }
}

synth::DatasetBundle load_bundle(const std::string& data_dir, const ModelConfig& mc) {
  const fs::path manifest = fs::path(data_dir) / "manifest.jsonl";
  synth::DatasetBundle bundle = synth::read_manifest(manifest.string());
  if (bundle.config.image_size != mc.image_size) {
    throw ConfigError("model.image_size " + std::to_string(mc.image_size) +
                      " does not match dataset image size " +
                      std::to_string(bundle.config.image_size));
  }
  if (mc.vocab_size < synth::Vocabulary::builtin().size()) {
    throw ConfigError("model.vocab_size smaller than the benchmark vocabulary");
  }
  return bundle;
}

const std::vector<synth::SampleRecord>& split_of(const synth::DatasetBundle& b,
                                                 const std::string& name) {
  if (name == "train") return b.train;
  if (name == "val") return b.val;
  if (name == "test") return b.test;
  if (name == "swap_test") return b.swap_test;
  throw ConfigError("unknown split '" + name + "' (train | val | test | swap_test)");
}

json report_json(const EvalReport& r) {
  json j{{"accuracy", r.accuracy},
         {"mean_iou", r.mean_iou},
         {"count", r.count},
         {"loss_total", r.loss_total},
         {"loss_ce", r.loss_ce},
         {"loss_bce", r.loss_bce},
         {"loss_l1", r.loss_l1},
         {"loss_giou", r.loss_giou},
         {"per_relation", r.per_relation_accuracy}};
  if (r.swap_consistency >= 0) j["swap_consistency"] = r.swap_consistency;
  if (r.pairs_differ >= 0) j["pairs_differ"] = r.pairs_differ;
  return j;
}

std::string join_command(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

int run_gen_data(const CommonOpts& common, const std::string& out_dir,
                 const std::string& command) {
  RunConfig cfg = load_run_config(common);
  write_run_preamble(out_dir, cfg, command);
  const synth::DatasetBundle bundle = synth::build_splits(cfg.data);
  synth::write_manifest(bundle, (fs::path(out_dir) / "manifest.jsonl").string());
  std::cout << "wrote " << bundle.train.size() << "/" << bundle.val.size() << "/"
            << bundle.test.size() << " train/val/test samples and " << bundle.swap_test.size() / 2
            << " swap pairs to " << out_dir << std::endl;
  return 0;
}

int run_train(const CommonOpts& common, const std::string& data_dir, const std::string& out_dir,
              const std::string& command) {
  RunConfig cfg = load_run_config(common);
  write_run_preamble(out_dir, cfg, command);
  const synth::DatasetBundle bundle = load_bundle(data_dir, cfg.model);

  GroundingModel model(cfg.model, cfg.train.seed);
  const TrainResult result = train_model(model, bundle, cfg.train, LossToggles{},
                                         (fs::path(out_dir) / "metrics.jsonl").string());
  const uint64_t hash = model_config_hash(cfg.model);
  save_checkpoint(model.params(), hash, (fs::path(out_dir) / "checkpoint_best.bin").string());

  EvalReport test = evaluate_model(model, bundle.test, bundle.config);
  EvalReport swap;
  json out{{"best_step", result.best_step},
           {"steps_run", result.steps_run},
           {"train_seconds", result.seconds},
           {"val", report_json(result.best_val)},
           {"test", report_json(test)}};
  if (!bundle.swap_test.empty()) {
    swap = evaluate_model(model, bundle.swap_test, bundle.config);
    out["swap"] = report_json(swap);
  }
  {
    std::ofstream f(fs::path(out_dir) / "report.json", std::ios::binary);
    f << out.dump(2) << '\n';
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int run_eval(const CommonOpts& common, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, const std::string& out_dir, bool allow_mismatch,
             const std::string& command) {
  RunConfig cfg = load_run_config(common);
  if (!out_dir.empty()) write_run_preamble(out_dir, cfg, command);
  const synth::DatasetBundle bundle = load_bundle(data_dir, cfg.model);
  GroundingModel model(cfg.model, cfg.train.seed);
  load_checkpoint(checkpoint, &model.params(), model_config_hash(cfg.model), allow_mismatch);
  const EvalReport rep = evaluate_model(model, split_of(bundle, split), bundle.config);
  const json j = report_json(rep);
  if (!out_dir.empty()) {
    std::ofstream f(fs::path(out_dir) / "report.json", std::ios::binary);
    f << j.dump(2) << '\n';
  }
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_ablate(const CommonOpts& common, const std::string& suite, const std::string& data_dir,
               const std::string& out_dir, int seeds, const std::string& command) {
  RunConfig cfg = load_run_config(common);
  write_run_preamble(out_dir, cfg, command);
  const synth::DatasetBundle bundle = load_bundle(data_dir, cfg.model);
  const AblationTable table = run_ablation(suite, cfg, bundle, seeds, out_dir);
  for (const auto& [arm, acc] : table.arm_accuracy) {
    std::cout << suite << " arm " << arm << ": acc@0.5 " << acc << ", relation-subset "
              << table.arm_relation_accuracy.at(arm) << ", swap-consistency "
              << table.arm_swap_consistency.at(arm) << std::endl;
  }
  for (const auto& row : table.rows) {
    if (row.failed) {
      std::cout << suite << " arm " << row.arm << " seed " << row.seed << " FAILED: " << row.error
                << std::endl;
    }
  }
  return 0;
}

int run_attn_dump(const CommonOpts& common, const std::string& checkpoint,
                  const std::string& data_dir, const std::string& split, int index, int swap_pair,
                  const std::string& out_dir, bool allow_mismatch, const std::string& command) {
  RunConfig cfg = load_run_config(common);
  write_run_preamble(out_dir, cfg, command);
  const synth::DatasetBundle bundle = load_bundle(data_dir, cfg.model);
  GroundingModel model(cfg.model, cfg.train.seed);
  load_checkpoint(checkpoint, &model.params(), model_config_hash(cfg.model), allow_mismatch);

  int written = 0;
  if (swap_pair >= 0) {
    std::vector<const synth::SampleRecord*> members;
    for (const auto& r : bundle.swap_test) {
      if (r.swap_pair == swap_pair) members.push_back(&r);
    }
    if (members.size() != 2) {
      throw ContractError("swap pair " + std::to_string(swap_pair) + " not found");
    }
    written += dump_attention(model, *members[0], bundle.config,
                              (fs::path(out_dir) / "pair_a").string())
                   .maps_written;
    written += dump_attention(model, *members[1], bundle.config,
                              (fs::path(out_dir) / "pair_b").string())
                   .maps_written;
  } else {
    const auto& records = split_of(bundle, split);
    if (index < 0 || index >= static_cast<int>(records.size())) {
      throw ContractError("sample index " + std::to_string(index) + " outside split of " +
                          std::to_string(records.size()));
    }
    written += dump_attention(model, records[static_cast<size_t>(index)], bundle.config, out_dir)
                   .maps_written;
  }
  std::cout << "wrote " << written << " heatmaps to " << out_dir << std::endl;
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"grounder: word-to-pixel visual grounding on a synthetic benchmark"};
  app.require_subcommand(0, 1);
  bool show_keys = false;
  app.add_flag("--config-keys", show_keys, "print every config key with default and doc");

  CommonOpts common;
  std::string out_dir, data_dir, checkpoint, split = "test", suite;
  int index = 0, swap_pair = -1, seeds = 1;
  bool allow_mismatch = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "flat-key config file");
    sub->add_option("--set", common.overrides, "override: key=value (repeatable)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the benchmark manifest");
  add_common(gen);
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a grounding model");
  add_common(train);
  train->add_option("--data", data_dir, "directory with manifest.jsonl")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "directory with manifest.jsonl")->required();
  eval->add_option("--split", split, "train | val | test | swap_test");
  eval->add_option("--out", out_dir, "optional output directory");
  eval->add_flag("--allow-config-mismatch", allow_mismatch, "load despite config hash mismatch");

  CLI::App* ablate = app.add_subcommand("ablate", "train and compare ablation arms");
  add_common(ablate);
  ablate->add_option("--suite", suite,
                     "word-vs-sentence | decoder-depth | loss-terms | freeze-modes")
      ->required();
  ablate->add_option("--data", data_dir, "directory with manifest.jsonl")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--seeds", seeds, "seeds per arm");

  CLI::App* dump = app.add_subcommand("attn-dump", "export cross-attention heatmaps");
  add_common(dump);
  dump->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  dump->add_option("--data", data_dir, "directory with manifest.jsonl")->required();
  dump->add_option("--split", split, "split to index into");
  dump->add_option("--index", index, "sample index within the split");
  dump->add_option("--swap-pair", swap_pair, "dump both sides of this swap pair");
  dump->add_option("--out", out_dir, "output directory")->required();
  dump->add_flag("--allow-config-mismatch", allow_mismatch, "load despite config hash mismatch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (show_keys) {
    std::cout << describe_config_keys();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help() << std::endl;
    return 2;
  }

  const std::string command = join_command(argc, argv);
  try {
    if (gen->parsed()) return run_gen_data(common, out_dir, command);
    if (train->parsed()) return run_train(common, data_dir, out_dir, command);
    if (eval->parsed()) {
      return run_eval(common, checkpoint, data_dir, split, out_dir, allow_mismatch, command);
    }
    if (ablate->parsed()) return run_ablate(common, suite, data_dir, out_dir, seeds, command);
    if (dump->parsed()) {
      return run_attn_dump(common, checkpoint, data_dir, split, index, swap_pair, out_dir,
                           allow_mismatch, command);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}

}  // namespace grounder
