#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "grounder/synthbench.hpp"
#include "test_util.hpp"

using namespace grounder;
using namespace grounder::synth;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Bounding box of an object's drawn pixels from the isolated render.
bool extract_box_px(const Tensor<float>& img, double* x1, double* y1, double* x2, double* y2) {
  const int n = img.dim(0);
  int min_r = n, max_r = -1, min_c = n, max_c = -1;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const float* px = img.data() + (static_cast<size_t>(r) * n + c) * 3;
      if (px[0] != 0.0f || px[1] != 0.0f || px[2] != 0.0f) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
    }
  }
  if (max_r < 0) return false;
  *x1 = min_c;
  *y1 = min_r;
  *x2 = max_c + 1;
  *y2 = max_r + 1;
  return true;
}

}  // namespace

TEST_CASE("tokenizer contract") {
  Vocabulary vocab = Vocabulary::from_words({"red", "square"});  // red=3, square=4
  TokenSequence t = tokenize({"red", "square"}, vocab, 4);
  CHECK(t.ids == std::vector<int>{0, 3, 4, 1, 1});
  CHECK(t.true_len == 3);
  CHECK(t.pad == std::vector<uint8_t>{0, 0, 0, 1, 1});

  TokenSequence empty = tokenize({}, vocab, 4);
  CHECK(empty.ids == std::vector<int>{0, 1, 1, 1, 1});
  CHECK(empty.true_len == 1);
  CHECK(empty.pad[0] == 0);  // [CLS] is never masked

  TokenSequence trimmed = tokenize({"red", "red", "red", "red", "red", "red"}, vocab, 4);
  CHECK(trimmed.ids == std::vector<int>{0, 3, 3, 3, 3});
  CHECK(trimmed.true_len == 5);

  TokenSequence unk = tokenize({"zebra"}, vocab, 4);
  CHECK(unk.ids[1] == kTokUnk);
}

TEST_CASE("builtin vocabulary is bijective over non-reserved entries") {
  const Vocabulary& v = Vocabulary::builtin();
  CHECK(v.size() == 22);
  std::set<std::string> seen;
  for (int i = 3; i < v.size(); ++i) {
    CHECK(seen.insert(v.word_of(i)).second);
    CHECK(v.id_of(v.word_of(i)) == i);
  }
  CHECK(v.id_of("nonexistent") == kTokUnk);
}

TEST_CASE("scene generation is deterministic and respects bounds") {
  GenConfig cfg;
  Scene a = generate_scene(1234, cfg);
  Scene b = generate_scene(1234, cfg);
  REQUIRE(a.objects.size() == b.objects.size());
  CHECK(a.kind == b.kind);
  for (size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].category == b.objects[i].category);
    CHECK(a.objects[i].box.cx == b.objects[i].box.cx);
    CHECK(a.objects[i].box.cy == b.objects[i].box.cy);
    CHECK(a.objects[i].box.w == b.objects[i].box.w);
    CHECK(a.objects[i].box.h == b.objects[i].box.h);
  }

  GenConfig two;
  two.min_objects = 2;
  two.max_objects = 2;
  two.frac_crisscross = two.frac_swappable = two.frac_nested = 0;  // generic only
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Scene s = generate_scene(seed, two);
    CHECK(s.objects.size() == 2);
  }
}

TEST_CASE("property sweep: boxes inside the image, constraints hold") {
  GenConfig cfg;
  int dup_scenes = 0, total = 0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    Scene s = generate_scene(seed, cfg);
    ++total;
    const int n = static_cast<int>(s.objects.size());
    CHECK(n >= 2);
    CHECK(n <= 6);
    bool any_dup = false;
    for (int i = 0; i < n; ++i) {
      const auto& o = s.objects[static_cast<size_t>(i)];
      const Corners c = to_corners(o.box);
      CHECK(c.x1 >= 0.0);
      CHECK(c.y1 >= 0.0);
      CHECK(c.x2 <= 1.0);
      CHECK(c.y2 <= 1.0);
      // Attribute consistency: exactly one color, at most one size bit.
      const auto attrs = o.attribute_vector();
      CHECK(attrs[kAttrRed] + attrs[kAttrGreen] + attrs[kAttrBlue] + attrs[kAttrYellow] == 1);
      CHECK(attrs[kAttrLarge] + attrs[kAttrSmall] <= 1);
      for (int j = i + 1; j < n; ++j) {
        any_dup |= s.objects[static_cast<size_t>(i)].category ==
                   s.objects[static_cast<size_t>(j)].category;
        if (s.kind != SceneKind::nested) {
          CHECK(iou(o.box, s.objects[static_cast<size_t>(j)].box) <= cfg.max_overlap_iou);
        }
      }
    }
    dup_scenes += any_dup ? 1 : 0;
  }
  // Forced duplicates plus pair scenes keep repeated categories frequent.
  CHECK(dup_scenes > total / 2);
}

TEST_CASE("expression search resolves uniquely through the oracle") {
  GenConfig cfg;
  int with_relation = 0;
  for (uint64_t seed = 2000; seed < 2300; ++seed) {
    Scene s = generate_scene(seed, cfg);
    bool found = false;
    for (int r = 0; r < static_cast<int>(s.objects.size()) && !found; ++r) {
      auto words = generate_expression(s, r, cfg);
      if (!words) continue;
      found = true;
      auto hits = resolve_expression(*words, s, cfg);
      REQUIRE(hits.size() == 1);
      CHECK(hits[0] == r);
      bool rel = false;
      for (const auto& w : *words) {
        rel |= w == "above" || w == "below" || w == "left" || w == "right" || w == "inside";
      }
      with_relation += rel ? 1 : 0;
    }
    CHECK(found);
  }
  CHECK(with_relation > 50);
}

TEST_CASE("hand-built scenes give the expected minimal expressions") {
  GenConfig cfg;
  Scene s;
  s.seed = 1;
  s.kind = SceneKind::generic;
  SceneObject red_sq;
  red_sq.category = kSquare;
  red_sq.color = kAttrRed;
  red_sq.size_class = 1;
  red_sq.box = {0.3, 0.3, 0.2, 0.2};
  SceneObject blue_sq = red_sq;
  blue_sq.color = kAttrBlue;
  blue_sq.box = {0.7, 0.7, 0.2, 0.2};
  s.objects = {red_sq, blue_sq};
  auto words = generate_expression(s, 0, cfg);
  REQUIRE(words.has_value());
  CHECK(*words == std::vector<std::string>{"red", "square"});

  // Two red circles stacked vertically: relation needed, upper referent.
  Scene v;
  v.seed = 2;
  v.kind = SceneKind::generic;
  SceneObject top;
  top.category = kCircle;
  top.color = kAttrRed;
  top.size_class = 1;
  top.box = {0.5, 0.25, 0.2, 0.2};
  SceneObject bottom = top;
  bottom.box = {0.5, 0.75, 0.2, 0.2};
  v.objects = {top, bottom};
  auto upper = generate_expression(v, 0, cfg);
  REQUIRE(upper.has_value());
  CHECK(*upper == std::vector<std::string>{"circle", "above", "the", "circle"});
  auto hits = resolve_expression(*upper, v, cfg);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0] == 0);
}

TEST_CASE("relation predicates honor the margin") {
  SceneObject a, b;
  a.box = {0.5, 0.30, 0.1, 0.1};
  b.box = {0.5, 0.45, 0.1, 0.1};
  CHECK(relation_holds(Relation::above, a, b, 0.10));
  CHECK_FALSE(relation_holds(Relation::above, a, b, 0.20));
  CHECK(relation_holds(Relation::below, b, a, 0.10));
  CHECK_FALSE(relation_holds(Relation::left_of, a, b, 0.10));

  SceneObject inner, outer;
  outer.box = {0.5, 0.5, 0.4, 0.4};
  inner.box = {0.5, 0.5, 0.1, 0.1};
  CHECK(relation_holds(Relation::inside, inner, outer, 0.10));
  CHECK_FALSE(relation_holds(Relation::inside, outer, inner, 0.10));
}

TEST_CASE("rendering is deterministic and pure") {
  GenConfig cfg;
  Scene s = generate_scene(555, cfg);
  Tensor<float> a = render_scene(s, cfg.image_size);
  Tensor<float> b = render_scene(s, cfg.image_size);
  REQUIRE(a.size() == b.size());
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
  CHECK(a.shape() == Shape{64, 64, 3});
  for (int64_t i = 0; i < a.size(); ++i) {
    CHECK(a.data()[i] >= 0.0f);
    CHECK(a.data()[i] <= 1.0f);
  }
}

TEST_CASE("render/label consistency: segmented extent matches the stored box") {
  GenConfig cfg;
  int checked = 0;
  for (uint64_t seed = 3000; seed < 3120; ++seed) {
    Scene s = generate_scene(seed, cfg);
    for (const auto& obj : s.objects) {
      Tensor<float> iso = render_object_isolated(obj, cfg.image_size);
      double x1, y1, x2, y2;
      REQUIRE(extract_box_px(iso, &x1, &y1, &x2, &y2));
      const double px = cfg.image_size;
      const Corners c = to_corners(obj.box);
      CHECK(std::abs(x1 - c.x1 * px) <= 1.0 + 1e-6);
      CHECK(std::abs(y1 - c.y1 * px) <= 1.0 + 1e-6);
      CHECK(std::abs(x2 - c.x2 * px) <= 1.0 + 1e-6);
      CHECK(std::abs(y2 - c.y2 * px) <= 1.0 + 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 300);
}

TEST_CASE("build_splits: counts, seed disjointness, swap pairing") {
  GenConfig cfg = testutil::small_data_config(60, 20, 20, 5);
  DatasetBundle b = build_splits(cfg);
  CHECK(static_cast<int>(b.train.size()) == 60);
  CHECK(static_cast<int>(b.val.size()) == 20);
  CHECK(static_cast<int>(b.test.size()) == 20);
  CHECK(static_cast<int>(b.swap_test.size()) == 10);

  // Seed ranges are disjoint by construction.
  std::set<uint64_t> train_seeds, other_seeds;
  for (const auto& r : b.train) train_seeds.insert(r.scene_seed);
  for (const auto& r : b.val) other_seeds.insert(r.scene_seed);
  for (const auto& r : b.test) other_seeds.insert(r.scene_seed);
  for (uint64_t s : other_seeds) CHECK(train_seeds.count(s) == 0);

  // Swap pairs: linked ids, single-word difference, distinct ground truth.
  for (int pair = 0; pair < 5; ++pair) {
    std::vector<const SampleRecord*> members;
    for (const auto& r : b.swap_test) {
      if (r.swap_pair == pair) members.push_back(&r);
    }
    REQUIRE(members.size() == 2);
    CHECK(members[0]->swap_side != members[1]->swap_side);
    REQUIRE(members[0]->words.size() == members[1]->words.size());
    int diff_words = 0;
    for (size_t i = 0; i < members[0]->words.size(); ++i) {
      diff_words += members[0]->words[i] != members[1]->words[i] ? 1 : 0;
    }
    CHECK(diff_words == 1);
    const bool same_box = members[0]->box.cx == members[1]->box.cx &&
                          members[0]->box.cy == members[1]->box.cy &&
                          members[0]->box.w == members[1]->box.w &&
                          members[0]->box.h == members[1]->box.h;
    CHECK_FALSE(same_box);
  }

  // Overlapping seed ranges are rejected.
  GenConfig bad = cfg;
  bad.val_seed_base = bad.train_seed_base + 10;
  CHECK_THROWS_AS(build_splits(bad), ContractError);
}

TEST_CASE("every emitted record resolves uniquely to its referent") {
  GenConfig cfg = testutil::small_data_config(80, 10, 10, 4);
  DatasetBundle b = build_splits(cfg);
  auto check_split = [&](const std::vector<SampleRecord>& split) {
    for (const auto& r : split) {
      Scene s = generate_scene(r.scene_seed, cfg);
      auto hits = resolve_expression(r.words, s, cfg);
      REQUIRE(hits.size() == 1);
      CHECK(hits[0] == r.referent);
      const auto& obj = s.objects[static_cast<size_t>(r.referent)];
      CHECK(obj.category == r.category);
      CHECK(obj.attribute_bits() == r.attribute_bits);
      CHECK(obj.box.cx == r.box.cx);
    }
  };
  check_split(b.train);
  check_split(b.val);
  check_split(b.test);
  check_split(b.swap_test);
}

TEST_CASE("order-critical pairs share a bag of words but not a referent") {
  GenConfig cfg;
  cfg.frac_crisscross = 1.0;
  cfg.frac_swappable = 0;
  cfg.frac_nested = 0;
  cfg.train_count = 20;
  cfg.val_count = 2;
  cfg.test_count = 2;
  cfg.swap_pairs = 0;
  DatasetBundle b = build_splits(cfg);
  int pairs_checked = 0;
  for (size_t i = 0; i + 1 < b.train.size(); ++i) {
    const auto& a = b.train[i];
    const auto& c = b.train[i + 1];
    if (a.scene_seed != c.scene_seed || a.emit_index != 0) continue;
    CHECK(a.order_critical);
    CHECK(c.order_critical);
    std::multiset<std::string> bag_a(a.words.begin(), a.words.end());
    std::multiset<std::string> bag_c(c.words.begin(), c.words.end());
    CHECK(bag_a == bag_c);
    CHECK(a.words != c.words);
    CHECK(a.referent != c.referent);
    ++pairs_checked;
  }
  CHECK(pairs_checked >= 8);
}

TEST_CASE("manifest round-trip is lossless and byte-identical across runs") {
  namespace fs = std::filesystem;
  GenConfig cfg = testutil::small_data_config(30, 8, 8, 3);
  DatasetBundle b = build_splits(cfg);
  const std::string dir = (fs::temp_directory_path() / "grounder_manifest_test").string();
  fs::create_directories(dir);
  const std::string p1 = dir + "/m1.jsonl", p2 = dir + "/m2.jsonl";
  write_manifest(b, p1);
  DatasetBundle again = build_splits(cfg);
  write_manifest(again, p2);
  CHECK(slurp(p1) == slurp(p2));

  DatasetBundle loaded = read_manifest(p1);
  CHECK(loaded.train.size() == b.train.size());
  CHECK(loaded.swap_test.size() == b.swap_test.size());
  CHECK(loaded.config.image_size == cfg.image_size);
  for (size_t i = 0; i < b.train.size(); ++i) {
    CHECK(loaded.train[i].scene_seed == b.train[i].scene_seed);
    CHECK(loaded.train[i].words == b.train[i].words);
    CHECK(loaded.train[i].token_ids == b.train[i].token_ids);
    CHECK(loaded.train[i].box.cx == b.train[i].box.cx);
    CHECK(loaded.train[i].category == b.train[i].category);
    CHECK(loaded.train[i].attribute_bits == b.train[i].attribute_bits);
    CHECK(loaded.train[i].relation == b.train[i].relation);
  }

  // Re-rendering from a loaded record reproduces the image bit for bit.
  Tensor<float> img1 = render_sample(b.train[0], cfg);
  Tensor<float> img2 = render_sample(loaded.train[0], loaded.config);
  for (int64_t i = 0; i < img1.size(); ++i) CHECK(img1.data()[i] == img2.data()[i]);

  CHECK_THROWS_AS(read_manifest(dir + "/missing.jsonl"), IntegrityError);
  fs::remove_all(dir);
}
