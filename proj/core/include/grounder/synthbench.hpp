#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grounder/geometry.hpp"
#include "grounder/tensor.hpp"
#include "grounder/tokens.hpp"

namespace grounder::synth {

// Categories (N_c = 4).
enum : int { kCircle = 0, kSquare = 1, kTriangle = 2, kDiamond = 3 };
constexpr int kNumCategories = 4;

// Attribute bit indices (N_a = 8): one color, at most one size, textures.
enum : int {
  kAttrRed = 0,
  kAttrGreen = 1,
  kAttrBlue = 2,
  kAttrYellow = 3,
  kAttrLarge = 4,
  kAttrSmall = 5,
  kAttrStriped = 6,
  kAttrHollow = 7,
};
constexpr int kNumAttributes = 8;

enum class Relation { none, above, below, left_of, right_of, inside };

const char* category_word(int category);
const char* color_word(int color);
std::string relation_name(Relation r);
Relation relation_from_name(const std::string& name);

struct SceneObject {
  int category = 0;
  int color = 0;        // 0..3
  int size_class = 1;   // 0 small, 1 medium, 2 large
  bool striped = false;
  bool hollow = false;
  BoundingBox box;
  int draw_order = 0;

  uint16_t attribute_bits() const;
  std::vector<uint8_t> attribute_vector() const;  // length kNumAttributes
  // Attribute words this object answers to, in canonical order.
  std::vector<std::string> attribute_words() const;
};

enum class SceneKind { generic, crisscross, swappable, nested };

struct Scene {
  uint64_t seed = 0;
  SceneKind kind = SceneKind::generic;
  std::vector<SceneObject> objects;
};

struct GenConfig {
  int image_size = 64;
  int min_objects = 2;
  int max_objects = 5;
  double duplicate_fraction = 0.6;   // generic scenes forced to repeat a category
  double same_color_fraction = 0.5;  // ... and the duplicate also repeats the color
  double frac_crisscross = 0.22;
  double frac_swappable = 0.22;
  double frac_nested = 0.12;
  double max_overlap_iou = 0.05;
  double relation_margin = 0.10;     // oracle predicate margin (fraction of image)
  double texture_fraction = 0.15;    // striped / hollow probability each
  int max_retries = 120;
  int manifest_t_max = 15;           // token ids stored in the manifest

  int train_count = 5000;
  int val_count = 500;
  int test_count = 500;
  int swap_pairs = 100;
  uint64_t train_seed_base = 1000000;
  uint64_t val_seed_base = 2000000;
  uint64_t test_seed_base = 3000000;
  uint64_t swap_seed_base = 4000000;
  uint64_t seed_range_span = 1000000;

  void validate() const;
};

// Word <-> id map with reserved [CLS]=0, [PAD]=1, [UNK]=2.
struct Vocabulary {
  std::vector<std::string> id_to_word;  // index == id; reserved slots included

  static const Vocabulary& builtin();
  static Vocabulary from_words(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(id_to_word.size()); }
  int id_of(const std::string& word) const;  // kTokUnk when absent
  const std::string& word_of(int id) const;
};

// Deterministic scene synthesis; the scene is a pure function of
// (seed, config) including the bounded feasibility retries.
Scene generate_scene(uint64_t seed, const GenConfig& cfg);

// Shortest uniquely-resolving expression for the referent, or nullopt.
std::optional<std::vector<std::string>> generate_expression(const Scene& scene, int referent,
                                                            const GenConfig& cfg);

// Exhaustive referent-resolution oracle: all object indices the expression
// describes. Independent of the generator's bookkeeping.
std::vector<int> resolve_expression(const std::vector<std::string>& words, const Scene& scene,
                                    const GenConfig& cfg);

// Geometric relation predicate on box centers with the configured margin.
bool relation_holds(Relation r, const SceneObject& a, const SceneObject& b, double margin);

// [CLS] + word ids (unknown -> [UNK]), trimmed to t_max, padded with [PAD].
TokenSequence tokenize(const std::vector<std::string>& words, const Vocabulary& vocab, int t_max);

// Flat-shaded scene raster on a noisy neutral background, [H,W,3] in [0,1].
Tensor<float> render_scene(const Scene& scene, int image_size);

// One object alone on a black background; the segmentation oracle for
// render/label consistency checks.
Tensor<float> render_object_isolated(const SceneObject& obj, int image_size);

struct SampleRecord {
  std::string split;
  uint64_t scene_seed = 0;
  int emit_index = 0;  // which emitted sample of the scene
  int referent = 0;    // object index within the regenerated scene
  std::vector<std::string> words;
  std::vector<int> token_ids;  // manifest tokenization (t_max from GenConfig)
  int true_len = 1;
  BoundingBox box;
  int category = 0;
  uint16_t attribute_bits = 0;
  Relation relation = Relation::none;
  bool order_critical = false;
  int swap_pair = -1;
  int swap_side = -1;
  int image_size = 64;

  TargetLabels target() const;
};

struct DatasetBundle {
  GenConfig config;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> val;
  std::vector<SampleRecord> test;
  std::vector<SampleRecord> swap_test;  // paired; swap_pair/swap_side set
};

DatasetBundle build_splits(const GenConfig& cfg);

// Re-render the sample's image from its scene seed.
Tensor<float> render_sample(const SampleRecord& rec, const GenConfig& cfg);

// Line-delimited manifest with a header record carrying generator version
// and config; byte-identical for identical (config, code version).
void write_manifest(const DatasetBundle& bundle, const std::string& path);
DatasetBundle read_manifest(const std::string& path);

}  // namespace grounder::synth
