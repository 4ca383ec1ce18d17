#include "grounder/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace grounder {

FreezeMode freeze_mode_from_string(const std::string& s) {
  if (s == "end_to_end") return FreezeMode::end_to_end;
  if (s == "backbone") return FreezeMode::backbone;
  if (s == "backbone_encoder") return FreezeMode::backbone_encoder;
  throw ConfigError("unknown freeze mode '" + s +
                    "' (expected end_to_end | backbone | backbone_encoder)");
}

std::string freeze_mode_to_string(FreezeMode m) {
  switch (m) {
    case FreezeMode::end_to_end: return "end_to_end";
    case FreezeMode::backbone: return "backbone";
    case FreezeMode::backbone_encoder: return "backbone_encoder";
  }
  return "end_to_end";
}

namespace {

std::string query_mode_to_string(QueryMode m) {
  return m == QueryMode::word_level ? "word" : "sentence";
}

QueryMode query_mode_from_string(const std::string& s) {
  if (s == "word") return QueryMode::word_level;
  if (s == "sentence") return QueryMode::sentence_pooled;
  throw ConfigError("unknown query mode '" + s + "' (expected word | sentence)");
}

struct KeyBinding {
  std::string doc;
  std::function<void(RunConfig*, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T v{};
  std::string rest;
  is >> v;
  if (is.fail()) throw ConfigError("key '" + key + "': cannot parse value '" + value + "'");
  is >> rest;
  if (!rest.empty()) throw ConfigError("key '" + key + "': trailing junk in '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Table = std::map<std::string, KeyBinding>;

template <typename T, typename Obj>
void bind_num(Table& t, const std::string& key, const std::string& doc, Obj RunConfig::*obj,
              T Obj::*field) {
  t[key] = KeyBinding{
      doc,
      [obj, field, key](RunConfig* c, const std::string& v) {
        (c->*obj).*field = parse_number<T>(key, v);
      },
      [obj, field](const RunConfig& c) {
        if constexpr (std::is_floating_point_v<T>) {
          return fmt_double(static_cast<double>((c.*obj).*field));
        } else {
          return std::to_string((c.*obj).*field);
        }
      }};
}

template <typename Obj>
void bind_bool(Table& t, const std::string& key, const std::string& doc, Obj RunConfig::*obj,
               bool Obj::*field) {
  t[key] = KeyBinding{doc,
                      [obj, field, key](RunConfig* c, const std::string& v) {
                        (c->*obj).*field = parse_bool(key, v);
                      },
                      [obj, field](const RunConfig& c) {
                        return std::string((c.*obj).*field ? "true" : "false");
                      }};
}

const Table& key_table() {
  static const Table table = [] {
    Table t;
    // model.*
    bind_num(t, "model.image_size", "input image side in pixels", &RunConfig::model,
             &ModelConfig::image_size);
    bind_num(t, "model.backbone_stride", "total backbone stride (power of two)",
             &RunConfig::model, &ModelConfig::backbone_stride);
    bind_num(t, "model.backbone_channels", "backbone output channels C", &RunConfig::model,
             &ModelConfig::backbone_channels);
    bind_num(t, "model.dim", "transformer width D", &RunConfig::model, &ModelConfig::dim);
    bind_num(t, "model.heads", "attention heads", &RunConfig::model, &ModelConfig::heads);
    bind_num(t, "model.encoder_layers", "encoder depth M", &RunConfig::model,
             &ModelConfig::encoder_layers);
    bind_num(t, "model.decoder_layers", "decoder depth N", &RunConfig::model,
             &ModelConfig::decoder_layers);
    bind_num(t, "model.ffn_hidden", "FFN hidden width", &RunConfig::model,
             &ModelConfig::ffn_hidden);
    bind_num(t, "model.t_max", "max word tokens (excluding [CLS])", &RunConfig::model,
             &ModelConfig::t_max);
    bind_num(t, "model.vocab_size", "vocabulary size", &RunConfig::model,
             &ModelConfig::vocab_size);
    bind_num(t, "model.num_categories", "category count N_c", &RunConfig::model,
             &ModelConfig::num_categories);
    bind_num(t, "model.num_attributes", "attribute count N_a", &RunConfig::model,
             &ModelConfig::num_attributes);
    t["model.query_mode"] = KeyBinding{
        "decoder query mode: word | sentence",
        [](RunConfig* c, const std::string& v) { c->model.query_mode = query_mode_from_string(v); },
        [](const RunConfig& c) { return query_mode_to_string(c.model.query_mode); }};
    bind_bool(t, "model.norm_after_ffn", "layer norm after the FFN sub-block", &RunConfig::model,
              &ModelConfig::norm_after_ffn);
    bind_num(t, "model.dropout", "dropout rate (0 disables)", &RunConfig::model,
             &ModelConfig::dropout);
    t["model.loss_bce"] = KeyBinding{
        "attribute loss weight",
        [](RunConfig* c, const std::string& v) {
          c->model.loss_weights.bce = parse_number<double>("model.loss_bce", v);
        },
        [](const RunConfig& c) { return fmt_double(c.model.loss_weights.bce); }};
    t["model.loss_l1"] = KeyBinding{
        "L1 box loss weight",
        [](RunConfig* c, const std::string& v) {
          c->model.loss_weights.l1 = parse_number<double>("model.loss_l1", v);
        },
        [](const RunConfig& c) { return fmt_double(c.model.loss_weights.l1); }};
    t["model.loss_giou"] = KeyBinding{
        "generalized IoU loss weight",
        [](RunConfig* c, const std::string& v) {
          c->model.loss_weights.giou = parse_number<double>("model.loss_giou", v);
        },
        [](const RunConfig& c) { return fmt_double(c.model.loss_weights.giou); }};

    // train.*
    bind_num(t, "train.total_steps", "optimization steps", &RunConfig::train,
             &TrainSchedule::total_steps);
    bind_num(t, "train.freeze_steps", "warm-freeze steps (-1: 10% of total)", &RunConfig::train,
             &TrainSchedule::freeze_steps);
    t["train.freeze_mode"] = KeyBinding{
        "end_to_end | backbone | backbone_encoder",
        [](RunConfig* c, const std::string& v) { c->train.freeze_mode = freeze_mode_from_string(v); },
        [](const RunConfig& c) { return freeze_mode_to_string(c.train.freeze_mode); }};
    bind_num(t, "train.batch_size", "samples per step", &RunConfig::train,
             &TrainSchedule::batch_size);
    bind_num(t, "train.lr", "transformer learning rate", &RunConfig::train, &TrainSchedule::lr);
    bind_num(t, "train.lr_backbone", "backbone learning rate", &RunConfig::train,
             &TrainSchedule::lr_backbone);
    bind_num(t, "train.weight_decay", "decoupled weight decay", &RunConfig::train,
             &TrainSchedule::weight_decay);
    bind_num(t, "train.beta1", "AdamW beta1", &RunConfig::train, &TrainSchedule::beta1);
    bind_num(t, "train.beta2", "AdamW beta2", &RunConfig::train, &TrainSchedule::beta2);
    bind_num(t, "train.eps", "AdamW epsilon", &RunConfig::train, &TrainSchedule::eps);
    bind_num(t, "train.clip_norm", "global gradient norm clip (0 disables)", &RunConfig::train,
             &TrainSchedule::clip_norm);
    bind_num(t, "train.decay_step", "lr decay step (-1: 80% of total)", &RunConfig::train,
             &TrainSchedule::decay_step);
    bind_num(t, "train.decay_factor", "lr decay factor", &RunConfig::train,
             &TrainSchedule::decay_factor);
    bind_num(t, "train.eval_interval", "steps between validation evals", &RunConfig::train,
             &TrainSchedule::eval_interval);
    bind_num(t, "train.early_stop_val_accuracy", "stop when val accuracy reaches this (0 off)",
             &RunConfig::train, &TrainSchedule::early_stop_val_accuracy);
    bind_num(t, "train.seed", "training RNG seed", &RunConfig::train, &TrainSchedule::seed);

    // data.*
    bind_num(t, "data.image_size", "rendered image side", &RunConfig::data,
             &synth::GenConfig::image_size);
    bind_num(t, "data.min_objects", "min objects per generic scene", &RunConfig::data,
             &synth::GenConfig::min_objects);
    bind_num(t, "data.max_objects", "max objects per generic scene", &RunConfig::data,
             &synth::GenConfig::max_objects);
    bind_num(t, "data.duplicate_fraction", "generic scenes with a repeated category",
             &RunConfig::data, &synth::GenConfig::duplicate_fraction);
    bind_num(t, "data.same_color_fraction", "repeated category also repeats color",
             &RunConfig::data, &synth::GenConfig::same_color_fraction);
    bind_num(t, "data.frac_crisscross", "fraction of criss-cross scenes", &RunConfig::data,
             &synth::GenConfig::frac_crisscross);
    bind_num(t, "data.frac_swappable", "fraction of swappable scenes", &RunConfig::data,
             &synth::GenConfig::frac_swappable);
    bind_num(t, "data.frac_nested", "fraction of nested scenes", &RunConfig::data,
             &synth::GenConfig::frac_nested);
    bind_num(t, "data.max_overlap_iou", "max pairwise box IoU", &RunConfig::data,
             &synth::GenConfig::max_overlap_iou);
    bind_num(t, "data.relation_margin", "relation predicate margin", &RunConfig::data,
             &synth::GenConfig::relation_margin);
    bind_num(t, "data.texture_fraction", "striped/hollow probability", &RunConfig::data,
             &synth::GenConfig::texture_fraction);
    bind_num(t, "data.max_retries", "scene generation retries", &RunConfig::data,
             &synth::GenConfig::max_retries);
    bind_num(t, "data.manifest_t_max", "t_max used for manifest token ids", &RunConfig::data,
             &synth::GenConfig::manifest_t_max);
    bind_num(t, "data.train_count", "train split size", &RunConfig::data,
             &synth::GenConfig::train_count);
    bind_num(t, "data.val_count", "val split size", &RunConfig::data,
             &synth::GenConfig::val_count);
    bind_num(t, "data.test_count", "test split size", &RunConfig::data,
             &synth::GenConfig::test_count);
    bind_num(t, "data.swap_pairs", "swap pairs in the swap split", &RunConfig::data,
             &synth::GenConfig::swap_pairs);
    bind_num(t, "data.train_seed_base", "train split seed base", &RunConfig::data,
             &synth::GenConfig::train_seed_base);
    bind_num(t, "data.val_seed_base", "val split seed base", &RunConfig::data,
             &synth::GenConfig::val_seed_base);
    bind_num(t, "data.test_seed_base", "test split seed base", &RunConfig::data,
             &synth::GenConfig::test_seed_base);
    bind_num(t, "data.swap_seed_base", "swap split seed base", &RunConfig::data,
             &synth::GenConfig::swap_seed_base);
    bind_num(t, "data.seed_range_span", "seed range span per split", &RunConfig::data,
             &synth::GenConfig::seed_range_span);
    return t;
  }();
  return table;
}

}  // namespace

void apply_config_line(RunConfig* cfg, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_line(&cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void apply_override(RunConfig* cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like key=value, got '" + assignment + "'");
  }
  apply_config_line(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, binding] : key_table()) {
    os << key << " = " << binding.get(cfg) << "\n";
  }
  return os.str();
}

std::string describe_config_keys() {
  RunConfig defaults;
  std::ostringstream os;
  for (const auto& [key, binding] : key_table()) {
    os << key << " = " << binding.get(defaults) << "\n    " << binding.doc << "\n";
  }
  return os.str();
}

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

uint64_t model_config_hash(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::ostringstream os;
  for (const auto& [key, binding] : key_table()) {
    if (key.rfind("model.", 0) == 0) os << key << " = " << binding.get(cfg) << "\n";
  }
  return fnv1a(os.str());
}

uint64_t run_config_hash(const RunConfig& cfg) { return fnv1a(serialize_config(cfg)); }

}  // namespace grounder
