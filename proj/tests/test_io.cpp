#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "grounder/attnmap.hpp"
#include "grounder/checkpoint.hpp"
#include "grounder/cli.hpp"
#include "grounder/config.hpp"
#include "grounder/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace grounder;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"grounder"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config file parsing, overrides, unknown keys") {
  const fs::path dir = fresh_dir("grounder_cfg_test");
  const std::string path = (dir / "run.cfg").string();
  spit(path,
       "# comment\n"
       "model.dim = 32\n"
       "train.total_steps = 123   # trailing comment\n"
       "data.train_count = 50\n");
  RunConfig cfg = parse_config_file(path);
  CHECK(cfg.model.dim == 32);
  CHECK(cfg.train.total_steps == 123);
  CHECK(cfg.data.train_count == 50);

  apply_override(&cfg, "model.heads=8");
  CHECK(cfg.model.heads == 8);
  CHECK_THROWS_AS(apply_override(&cfg, "model.bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(&cfg, "model.dim"), ConfigError);
  CHECK_THROWS_AS(apply_override(&cfg, "model.dim=abc"), ConfigError);

  spit(path, "unknown.key = 1\n");
  CHECK_THROWS_AS(parse_config_file(path), ConfigError);
  spit(path, "model.dim 32\n");
  CHECK_THROWS_AS(parse_config_file(path), ConfigError);

  // Enum-valued keys.
  apply_override(&cfg, "model.query_mode=sentence");
  CHECK(cfg.model.query_mode == QueryMode::sentence_pooled);
  CHECK_THROWS_AS(apply_override(&cfg, "model.query_mode=both"), ConfigError);
  apply_override(&cfg, "train.freeze_mode=backbone_encoder");
  CHECK(cfg.train.freeze_mode == FreezeMode::backbone_encoder);
  fs::remove_all(dir);
}

TEST_CASE("canonical serialization round-trips and hashes separate sections") {
  RunConfig cfg;
  cfg.model.dim = 48;
  cfg.train.lr = 0.00025;
  const std::string text = serialize_config(cfg);

  // Every line parses back, reproducing the config.
  RunConfig back;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    REQUIRE(eq != std::string::npos);
    std::string key = line.substr(0, eq - 1);
    std::string value = line.substr(eq + 2);
    apply_config_line(&back, key, value);
  }
  CHECK(serialize_config(back) == text);

  const uint64_t h1 = model_config_hash(cfg.model);
  RunConfig other = cfg;
  other.train.lr = 0.5;
  CHECK(model_config_hash(other.model) == h1);  // train keys don't touch it
  other.model.dim = 64;
  CHECK(model_config_hash(other.model) != h1);
}

TEST_CASE("checkpoint: bitwise round-trip, truncation, hash guard, optimizer state") {
  const fs::path dir = fresh_dir("grounder_ckpt_test");
  ModelConfig mc = testutil::micro_config();
  GroundingModel model(mc, 3);
  const uint64_t hash = model_config_hash(mc);

  AdamWConfig ocfg;
  AdamW<float> opt(model.params(), ocfg);
  // A couple of steps so moments are nonzero.
  synth::GenConfig dcfg = testutil::small_data_config(4, 2, 2, 0);
  dcfg.image_size = mc.image_size;
  synth::DatasetBundle data = synth::build_splits(dcfg);
  const auto& vocab = synth::Vocabulary::builtin();
  for (int step = 0; step < 2; ++step) {
    model.params().zero_grads();
    const auto& rec = data.train[static_cast<size_t>(step)];
    Tensor32 img = synth::render_sample(rec, dcfg);
    TokenSequence toks = synth::tokenize(rec.words, vocab, mc.t_max);
    Tape32 tape;
    Tape32::Scope scope(tape);
    auto out = model.forward(img, toks);
    auto loss = total_loss(out.category_logits, out.attribute_logits, out.box, rec.target(),
                           mc.loss_weights);
    Tensor32 t = loss.total;
    tape.backward(t);
    opt.step(1e-3, 1e-4);
  }

  const std::string path = (dir / "model.bin").string();
  save_checkpoint(model.params(), hash, path, &opt);

  CheckpointMeta meta = peek_checkpoint(path);
  CHECK(meta.version == 1);
  CHECK(meta.config_hash == hash);
  CHECK(meta.has_optimizer);

  // Fresh model, different init; load reproduces every parameter bitwise and
  // the forward outputs exactly.
  GroundingModel loaded(mc, 999);
  AdamW<float> opt2(loaded.params(), ocfg);
  load_checkpoint(path, &loaded.params(), hash, false, &opt2);
  for (size_t i = 0; i < model.params().count(); ++i) {
    CHECK(model.params().at(i).tensor.vec() == loaded.params().at(i).tensor.vec());
  }
  CHECK(opt2.step_count() == opt.step_count());
  CHECK(opt2.first_moments() == opt.first_moments());
  CHECK(opt2.second_moments() == opt.second_moments());

  Tensor32 img = synth::render_sample(data.test[0], dcfg);
  TokenSequence toks = synth::tokenize(data.test[0].words, vocab, mc.t_max);
  auto a = model.forward(img, toks);
  auto b = loaded.forward(img, toks);
  for (int i = 0; i < 4; ++i) CHECK(a.box.data()[i] == b.box.data()[i]);

  // Partial load: parameters only, optimizer skipped.
  GroundingModel partial(mc, 1000);
  load_checkpoint(path, &partial.params(), hash);
  CHECK(partial.params().at(0).tensor.vec() == model.params().at(0).tensor.vec());

  // Truncation by one byte is an integrity error.
  std::string bytes = slurp(path);
  spit((dir / "trunc.bin").string(), bytes.substr(0, bytes.size() - 1));
  GroundingModel victim(mc, 5);
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.bin").string(), &victim.params(), hash),
                  IntegrityError);

  // Garbage magic.
  spit((dir / "junk.bin").string(), "NOTACKPT" + bytes.substr(8));
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.bin").string(), &victim.params(), hash),
                  IntegrityError);

  // Config-hash mismatch refuses unless overridden.
  CHECK_THROWS_AS(load_checkpoint(path, &victim.params(), hash + 1), IntegrityError);
  CHECK_NOTHROW(load_checkpoint(path, &victim.params(), hash + 1, true));

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string(), &victim.params(), hash),
                  IntegrityError);
  fs::remove_all(dir);
}

TEST_CASE("pgm writing: normalization and the constant-map edge case") {
  const fs::path dir = fresh_dir("grounder_pgm_test");
  write_pgm((dir / "map.pgm").string(), {0.0f, 0.5f, 1.0f, 0.25f}, 2, 2);
  std::string content = slurp((dir / "map.pgm").string());
  CHECK(content.rfind("P2\n2 2\n255\n", 0) == 0);
  CHECK(content.find("255") != std::string::npos);

  // A uniform map min-max normalizes to all zeros.
  write_pgm((dir / "flat.pgm").string(), {0.7f, 0.7f, 0.7f, 0.7f}, 2, 2);
  content = slurp((dir / "flat.pgm").string());
  CHECK(content == "P2\n2 2\n255\n0 0\n0 0\n");
  fs::remove_all(dir);
}

TEST_CASE("attention dump: map inventory, index arithmetic, raw weights") {
  const fs::path dir = fresh_dir("grounder_dump_test");
  ModelConfig mc = testutil::micro_config();
  mc.decoder_layers = 2;
  GroundingModel model(mc, 11);
  synth::GenConfig dcfg = testutil::small_data_config(2, 1, 2, 0);
  dcfg.image_size = mc.image_size;
  synth::DatasetBundle data = synth::build_splits(dcfg);
  const auto& rec = data.test[0];

  AttnDumpResult res = dump_attention(model, rec, dcfg, dir.string());
  const auto& vocab = synth::Vocabulary::builtin();
  TokenSequence toks = synth::tokenize(rec.words, vocab, mc.t_max);
  const int expected = mc.decoder_layers * (mc.heads + 1) * toks.true_len;
  CHECK(res.maps_written == expected);

  // Index lines: one per map, filenames exist.
  int index_lines = 0;
  {
    std::ifstream f(res.index_path);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      ++index_lines;
      json j = json::parse(line);
      CHECK(fs::exists(dir / j.at("file").get<std::string>()));
      CHECK(j.at("layer").get<int>() < mc.decoder_layers);
      CHECK(j.at("token_index").get<int>() < toks.true_len);
    }
  }
  CHECK(index_lines == expected);

  // Raw weights equal the live forward's records: the unflattened map at
  // grid (r,c) is weight row entry r*w + c.
  AttentionTrace<float> trace;
  Tensor32 img = synth::render_sample(rec, dcfg);
  (void)model.forward(img, toks, &trace);
  const auto cross = trace.cross_records();
  const int grid = mc.grid();
  {
    std::ifstream f(res.raw_path);
    std::string line;
    int rows_checked = 0;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      const int layer = j.at("layer");
      const int head = j.at("head");
      const int tok = j.at("token_index");
      const auto weights = j.at("weights").get<std::vector<float>>();
      REQUIRE(static_cast<int>(weights.size()) == grid * grid);
      const AttentionRecord<float>* match = nullptr;
      for (const auto* r : cross) {
        if (r->layer == layer && r->head == head) match = r;
      }
      REQUIRE(match != nullptr);
      for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
          CHECK(weights[static_cast<size_t>(r) * grid + c] ==
                doctest::Approx(match->at(tok, r * grid + c)).epsilon(1e-6));
        }
      }
      ++rows_checked;
    }
    CHECK(rows_checked == mc.decoder_layers * mc.heads * toks.true_len);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli: usage errors exit 2, runtime errors exit 1 with a message") {
  CHECK(run_cli({"bogus-subcommand"}) == 2);
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"train", "--nonsense"}) == 2);

  // Missing checkpoint: runtime failure naming the path.
  const fs::path dir = fresh_dir("grounder_cli_err_test");
  CHECK(run_cli({"gen-data", "--out", (dir / "data").string(), "--set", "data.train_count=6",
                 "--set", "data.val_count=2", "--set", "data.test_count=2", "--set",
                 "data.swap_pairs=1", "--set", "data.image_size=24"}) == 0);
  CHECK(run_cli({"eval", "--checkpoint", (dir / "nope.bin").string(), "--data",
                 (dir / "data").string(), "--set", "model.image_size=24"}) == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli: gen-data is byte-deterministic; train/eval/attn-dump round trip") {
  const fs::path dir = fresh_dir("grounder_cli_flow_test");
  const std::vector<std::string> data_overrides = {
      "--set", "data.train_count=12", "--set", "data.val_count=4",
      "--set", "data.test_count=4",   "--set", "data.swap_pairs=1",
      "--set", "data.image_size=24"};

  auto gen_args = [&](const std::string& out) {
    std::vector<std::string> a = {"gen-data", "--out", out};
    a.insert(a.end(), data_overrides.begin(), data_overrides.end());
    return a;
  };
  CHECK(run_cli(gen_args((dir / "d1").string())) == 0);
  CHECK(run_cli(gen_args((dir / "d2").string())) == 0);
  CHECK(slurp((dir / "d1" / "manifest.jsonl").string()) ==
        slurp((dir / "d2" / "manifest.jsonl").string()));
  CHECK(fs::exists(dir / "d1" / "config.txt"));
  CHECK(fs::exists(dir / "d1" / "run.json"));

  const std::vector<std::string> model_overrides = {
      "--set", "model.image_size=24", "--set", "model.backbone_channels=8",
      "--set", "model.dim=8",         "--set", "model.heads=2",
      "--set", "model.encoder_layers=1", "--set", "model.decoder_layers=1",
      "--set", "model.ffn_hidden=16", "--set", "model.t_max=6"};

  std::vector<std::string> train_args = {"train", "--data", (dir / "d1").string(), "--out",
                                         (dir / "run").string(), "--set",
                                         "train.total_steps=3", "--set", "train.batch_size=2",
                                         "--set", "train.eval_interval=3", "--set",
                                         "train.freeze_steps=0"};
  train_args.insert(train_args.end(), model_overrides.begin(), model_overrides.end());
  CHECK(run_cli(train_args) == 0);
  const std::string ckpt = (dir / "run" / "checkpoint_best.bin").string();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "run" / "metrics.jsonl"));
  CHECK(fs::exists(dir / "run" / "report.json"));

  std::vector<std::string> eval_args = {"eval", "--checkpoint", ckpt, "--data",
                                        (dir / "d1").string(), "--split", "test"};
  eval_args.insert(eval_args.end(), model_overrides.begin(), model_overrides.end());
  CHECK(run_cli(eval_args) == 0);

  // Mismatched architecture is refused without the override flag.
  std::vector<std::string> bad_eval = {"eval", "--checkpoint", ckpt, "--data",
                                       (dir / "d1").string(), "--set", "model.image_size=24",
                                       "--set", "model.dim=16"};
  CHECK(run_cli(bad_eval) == 1);

  std::vector<std::string> dump_args = {"attn-dump", "--checkpoint", ckpt, "--data",
                                        (dir / "d1").string(), "--split", "test", "--index", "0",
                                        "--out", (dir / "maps").string()};
  dump_args.insert(dump_args.end(), model_overrides.begin(), model_overrides.end());
  CHECK(run_cli(dump_args) == 0);
  CHECK(fs::exists(dir / "maps" / "index.jsonl"));

  std::vector<std::string> pair_args = {"attn-dump", "--checkpoint", ckpt, "--data",
                                        (dir / "d1").string(), "--swap-pair", "0", "--out",
                                        (dir / "pair_maps").string()};
  pair_args.insert(pair_args.end(), model_overrides.begin(), model_overrides.end());
  CHECK(run_cli(pair_args) == 0);
  CHECK(fs::exists(dir / "pair_maps" / "pair_a" / "index.jsonl"));
  CHECK(fs::exists(dir / "pair_maps" / "pair_b" / "index.jsonl"));

  std::vector<std::string> ablate_args = {"ablate", "--suite", "decoder-depth", "--data",
                                          (dir / "d1").string(), "--out",
                                          (dir / "ablate").string(), "--set",
                                          "train.total_steps=2", "--set", "train.batch_size=2",
                                          "--set", "train.freeze_steps=0"};
  ablate_args.insert(ablate_args.end(), model_overrides.begin(), model_overrides.end());
  CHECK(run_cli(ablate_args) == 0);
  CHECK(fs::exists(dir / "ablate" / "decoder-depth.jsonl"));
  fs::remove_all(dir);
}
