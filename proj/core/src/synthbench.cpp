#include "grounder/synthbench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include "grounder/random.hpp"
#include "grounder/version.hpp"
#include "json.hpp"

namespace grounder::synth {

using nlohmann::json;

namespace {

constexpr const char* kCategoryWords[] = {"circle", "square", "triangle", "diamond"};
constexpr const char* kColorWords[] = {"red", "green", "blue", "yellow"};

constexpr uint64_t kSceneSalt = 0x5343454e45ULL;   // scene stream
constexpr uint64_t kRenderSalt = 0x52454e444bULL;  // render noise stream

// Normalized side-length ranges per size class.
constexpr double kSizeLo[3] = {0.16, 0.24, 0.36};
constexpr double kSizeHi[3] = {0.22, 0.32, 0.46};

const std::array<std::array<float, 3>, 4> kPalette = {{
    {0.85f, 0.10f, 0.10f},  // red
    {0.10f, 0.75f, 0.15f},  // green
    {0.15f, 0.20f, 0.85f},  // blue
    {0.90f, 0.85f, 0.12f},  // yellow
}};

}  // namespace

const char* category_word(int category) { return kCategoryWords[category]; }
const char* color_word(int color) { return kColorWords[color]; }

std::string relation_name(Relation r) {
  switch (r) {
    case Relation::none: return "none";
    case Relation::above: return "above";
    case Relation::below: return "below";
    case Relation::left_of: return "left";
    case Relation::right_of: return "right";
    case Relation::inside: return "inside";
  }
  return "none";
}

Relation relation_from_name(const std::string& name) {
  if (name == "above") return Relation::above;
  if (name == "below") return Relation::below;
  if (name == "left") return Relation::left_of;
  if (name == "right") return Relation::right_of;
  if (name == "inside") return Relation::inside;
  return Relation::none;
}

uint16_t SceneObject::attribute_bits() const {
  uint16_t bits = static_cast<uint16_t>(1u << color);
  if (size_class == 2) bits |= 1u << kAttrLarge;
  if (size_class == 0) bits |= 1u << kAttrSmall;
  if (striped) bits |= 1u << kAttrStriped;
  if (hollow) bits |= 1u << kAttrHollow;
  return bits;
}

std::vector<uint8_t> SceneObject::attribute_vector() const {
  std::vector<uint8_t> v(kNumAttributes, 0);
  const uint16_t bits = attribute_bits();
  for (int i = 0; i < kNumAttributes; ++i) v[static_cast<size_t>(i)] = (bits >> i) & 1;
  return v;
}

std::vector<std::string> SceneObject::attribute_words() const {
  // Canonical expression order: size, color, texture.
  std::vector<std::string> w;
  if (size_class == 2) w.push_back("large");
  if (size_class == 0) w.push_back("small");
  w.push_back(kColorWords[color]);
  if (striped) w.push_back("striped");
  if (hollow) w.push_back("hollow");
  return w;
}

void GenConfig::validate() const {
  if (image_size < 16) throw ContractError("GenConfig: image_size too small");
  if (min_objects < 2 || max_objects > 6 || min_objects > max_objects) {
    throw ContractError("GenConfig: object count bounds must satisfy 2 <= min <= max <= 6");
  }
  if (frac_crisscross + frac_swappable + frac_nested > 1.0) {
    throw ContractError("GenConfig: scene kind fractions exceed 1");
  }
  const uint64_t bases[4] = {train_seed_base, val_seed_base, test_seed_base, swap_seed_base};
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      const uint64_t lo = std::min(bases[i], bases[j]);
      const uint64_t hi = std::max(bases[i], bases[j]);
      if (lo + seed_range_span > hi) {
        throw ContractError("GenConfig: overlapping split seed ranges");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary v = from_words({
      "red", "green", "blue", "yellow", "large", "small", "striped", "hollow",
      "circle", "square", "triangle", "diamond",
      "above", "below", "left", "right", "of", "inside", "the",
  });
  return v;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  v.id_to_word = {"[CLS]", "[PAD]", "[UNK]"};
  for (const auto& w : words) v.id_to_word.push_back(w);
  return v;
}

int Vocabulary::id_of(const std::string& word) const {
  for (size_t i = 3; i < id_to_word.size(); ++i) {
    if (id_to_word[i] == word) return static_cast<int>(i);
  }
  return kTokUnk;
}

const std::string& Vocabulary::word_of(int id) const {
  return id_to_word.at(static_cast<size_t>(id));
}

TokenSequence tokenize(const std::vector<std::string>& words, const Vocabulary& vocab,
                       int t_max) {
  TokenSequence t;
  t.ids.assign(static_cast<size_t>(t_max) + 1, kTokPad);
  t.pad.assign(static_cast<size_t>(t_max) + 1, 1);
  t.ids[0] = kTokCls;
  t.pad[0] = 0;
  const int keep = std::min<int>(static_cast<int>(words.size()), t_max);
  for (int i = 0; i < keep; ++i) {
    t.ids[static_cast<size_t>(i) + 1] = vocab.id_of(words[static_cast<size_t>(i)]);
    t.pad[static_cast<size_t>(i) + 1] = 0;
  }
  t.true_len = keep + 1;
  return t;
}

// ---------------------------------------------------------------------------
// Relation predicates and the resolution oracle
// ---------------------------------------------------------------------------

bool relation_holds(Relation r, const SceneObject& a, const SceneObject& b, double margin) {
  switch (r) {
    case Relation::above: return (b.box.cy - a.box.cy) > margin;
    case Relation::below: return (a.box.cy - b.box.cy) > margin;
    case Relation::left_of: return (b.box.cx - a.box.cx) > margin;
    case Relation::right_of: return (a.box.cx - b.box.cx) > margin;
    case Relation::inside: {
      const Corners ca = to_corners(a.box), cb = to_corners(b.box);
      return ca.x1 >= cb.x1 && ca.x2 <= cb.x2 && ca.y1 >= cb.y1 && ca.y2 <= cb.y2 &&
             box_area(a.box) < box_area(b.box);
    }
    case Relation::none: return true;
  }
  return false;
}

namespace {

struct Descriptor {
  std::vector<std::string> attrs;
  int category = -1;
};

struct ParsedExpression {
  Descriptor referent;
  Relation relation = Relation::none;
  Descriptor landmark;
};

int category_from_word(const std::string& w) {
  for (int c = 0; c < kNumCategories; ++c) {
    if (w == kCategoryWords[c]) return c;
  }
  return -1;
}

bool is_attr_word(const std::string& w) {
  static const std::vector<std::string> attrs = {"red",   "green", "blue",    "yellow",
                                                 "large", "small", "striped", "hollow"};
  return std::find(attrs.begin(), attrs.end(), w) != attrs.end();
}

// Grammar: [attr]* category [relation the [attr]* category]
// with relation in {above, below, left of, right of, inside}.
std::optional<ParsedExpression> parse_expression(const std::vector<std::string>& words) {
  ParsedExpression out;
  size_t i = 0;
  auto read_descriptor = [&](Descriptor* d) -> bool {
    while (i < words.size() && is_attr_word(words[i])) d->attrs.push_back(words[i++]);
    if (i >= words.size()) return false;
    d->category = category_from_word(words[i]);
    if (d->category < 0) return false;
    ++i;
    return true;
  };
  if (!read_descriptor(&out.referent)) return std::nullopt;
  if (i == words.size()) return out;

  if (words[i] == "above") { out.relation = Relation::above; ++i; }
  else if (words[i] == "below") { out.relation = Relation::below; ++i; }
  else if (words[i] == "inside") { out.relation = Relation::inside; ++i; }
  else if (words[i] == "left" || words[i] == "right") {
    out.relation = words[i] == "left" ? Relation::left_of : Relation::right_of;
    ++i;
    if (i >= words.size() || words[i] != "of") return std::nullopt;
    ++i;
  } else {
    return std::nullopt;
  }
  if (i >= words.size() || words[i] != "the") return std::nullopt;
  ++i;
  if (!read_descriptor(&out.landmark)) return std::nullopt;
  if (i != words.size()) return std::nullopt;
  return out;
}

bool object_matches(const SceneObject& obj, const Descriptor& d) {
  if (obj.category != d.category) return false;
  const auto words = obj.attribute_words();
  for (const auto& a : d.attrs) {
    if (std::find(words.begin(), words.end(), a) == words.end()) return false;
  }
  return true;
}

}  // namespace

std::vector<int> resolve_expression(const std::vector<std::string>& words, const Scene& scene,
                                    const GenConfig& cfg) {
  auto parsed = parse_expression(words);
  if (!parsed) return {};
  std::vector<int> out;
  const int n = static_cast<int>(scene.objects.size());
  for (int i = 0; i < n; ++i) {
    if (!object_matches(scene.objects[static_cast<size_t>(i)], parsed->referent)) continue;
    if (parsed->relation == Relation::none) {
      out.push_back(i);
      continue;
    }
    bool ok = false;
    for (int j = 0; j < n && !ok; ++j) {
      if (j == i) continue;
      const auto& lm = scene.objects[static_cast<size_t>(j)];
      ok = object_matches(lm, parsed->landmark) &&
           relation_holds(parsed->relation, scene.objects[static_cast<size_t>(i)], lm,
                          cfg.relation_margin);
    }
    if (ok) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expression search (shortest unique)
// ---------------------------------------------------------------------------

namespace {

// Attribute-word subsets of one object in canonical order, shortest first.
std::vector<std::vector<std::string>> descriptor_options(const SceneObject& obj) {
  const auto words = obj.attribute_words();  // canonical order already
  const int n = static_cast<int>(words.size());
  std::vector<std::vector<std::string>> out;
  std::vector<std::pair<int, uint32_t>> subsets;  // (popcount, mask)
  for (uint32_t mask = 0; mask < (1u << n); ++mask) {
    subsets.emplace_back(__builtin_popcount(mask), mask);
  }
  std::stable_sort(subsets.begin(), subsets.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [cnt, mask] : subsets) {
    std::vector<std::string> sel;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) sel.push_back(words[static_cast<size_t>(i)]);
    }
    out.push_back(std::move(sel));
  }
  return out;
}

std::vector<std::string> relation_words(Relation r) {
  switch (r) {
    case Relation::above: return {"above", "the"};
    case Relation::below: return {"below", "the"};
    case Relation::left_of: return {"left", "of", "the"};
    case Relation::right_of: return {"right", "of", "the"};
    case Relation::inside: return {"inside", "the"};
    case Relation::none: return {};
  }
  return {};
}

std::vector<std::string> compose_expression(const std::vector<std::string>& rattrs, int rcat,
                                            Relation rel, const std::vector<std::string>& lattrs,
                                            int lcat) {
  std::vector<std::string> words = rattrs;
  words.push_back(kCategoryWords[rcat]);
  if (rel != Relation::none) {
    for (auto& w : relation_words(rel)) words.push_back(w);
    for (const auto& a : lattrs) words.push_back(a);
    words.push_back(kCategoryWords[lcat]);
  }
  return words;
}

bool resolves_to(const std::vector<std::string>& words, const Scene& scene, int referent,
                 const GenConfig& cfg) {
  const auto hits = resolve_expression(words, scene, cfg);
  return hits.size() == 1 && hits[0] == referent;
}

}  // namespace

std::optional<std::vector<std::string>> generate_expression(const Scene& scene, int referent,
                                                            const GenConfig& cfg) {
  const auto& ref = scene.objects[static_cast<size_t>(referent)];
  const auto ref_descs = descriptor_options(ref);

  // Non-relational, shortest attribute subset first.
  for (const auto& attrs : ref_descs) {
    auto words = compose_expression(attrs, ref.category, Relation::none, {}, -1);
    if (resolves_to(words, scene, referent, cfg)) return words;
  }

  // Relational: collect candidates and keep the shortest word count
  // (enumeration order breaks ties deterministically).
  static const Relation kRels[] = {Relation::above, Relation::below, Relation::left_of,
                                   Relation::right_of, Relation::inside};
  std::optional<std::vector<std::string>> best;
  for (const auto& rattrs : ref_descs) {
    if (rattrs.size() > 2) break;
    for (size_t lm = 0; lm < scene.objects.size(); ++lm) {
      if (static_cast<int>(lm) == referent) continue;
      const auto& lobj = scene.objects[lm];
      for (const auto& lattrs : descriptor_options(lobj)) {
        if (lattrs.size() > 2) break;
        for (Relation rel : kRels) {
          if (!relation_holds(rel, ref, lobj, cfg.relation_margin)) continue;
          auto words =
              compose_expression(rattrs, ref.category, rel, lattrs, lobj.category);
          if (best && words.size() >= best->size()) continue;
          if (resolves_to(words, scene, referent, cfg)) best = words;
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

namespace {

BoundingBox sample_box(RandomSource& rng, int size_class) {
  const double side = rng.uniform(kSizeLo[size_class], kSizeHi[size_class]);
  double w = side, h = side;
  const double cx = rng.uniform(w / 2 + 0.02, 0.98 - w / 2);
  const double cy = rng.uniform(h / 2 + 0.02, 0.98 - h / 2);
  return {cx, cy, w, h};
}

bool placement_ok(const BoundingBox& box, const std::vector<SceneObject>& placed,
                  double max_overlap) {
  for (const auto& o : placed) {
    if (iou(box, o.box) > max_overlap) return false;
  }
  return true;
}

bool all_in_frame(const std::vector<SceneObject>& objects, double margin = 0.01) {
  for (const auto& o : objects) {
    const Corners c = to_corners(o.box);
    if (c.x1 < margin || c.y1 < margin || c.x2 > 1.0 - margin || c.y2 > 1.0 - margin) {
      return false;
    }
  }
  return true;
}

SceneObject random_object(RandomSource& rng, double texture_fraction) {
  SceneObject o;
  o.category = rng.uniform_int(0, kNumCategories - 1);
  o.color = rng.uniform_int(0, 3);
  o.size_class = rng.uniform_int(0, 2);
  o.striped = rng.bernoulli(texture_fraction);
  o.hollow = !o.striped && rng.bernoulli(texture_fraction);
  return o;
}

struct EmitSpec {
  int referent = 0;
  std::vector<std::string> words;
  Relation relation = Relation::none;
  bool order_critical = false;
  int swap_side = -1;
};

struct SceneBuild {
  Scene scene;
  std::vector<EmitSpec> emits;
  bool ok = false;
};

// Generic scene: 2..max objects, duplicated category (and sometimes color)
// in a configured fraction; one sample with the shortest unique expression.
void build_generic(RandomSource& rng, const GenConfig& cfg, SceneBuild* out) {
  const int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  const bool force_dup = n >= 2 && rng.bernoulli(cfg.duplicate_fraction);
  const bool same_color = force_dup && rng.bernoulli(cfg.same_color_fraction);
  auto& objs = out->scene.objects;
  for (int i = 0; i < n; ++i) {
    SceneObject o = random_object(rng, cfg.texture_fraction);
    if (force_dup && i == 1) {
      o.category = objs[0].category;
      if (same_color) o.color = objs[0].color;
    }
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      o.box = sample_box(rng, o.size_class);
      placed = placement_ok(o.box, objs, cfg.max_overlap_iou);
    }
    if (!placed) return;
    o.draw_order = i;
    objs.push_back(o);
  }
  // Referent: rotate from a random start until one resolves uniquely.
  const int start = rng.uniform_int(0, n - 1);
  for (int k = 0; k < n; ++k) {
    const int r = (start + k) % n;
    auto words = generate_expression(out->scene, r, cfg);
    if (!words) continue;
    EmitSpec e;
    e.referent = r;
    e.words = *words;
    auto parsed = parse_expression(*words);
    e.relation = parsed ? parsed->relation : Relation::none;
    out->emits.push_back(std::move(e));
    out->ok = true;
    return;
  }
}

// Criss-cross scene: two category pairs arranged so that "A rel the B" and
// "B rel the A" are both unique with the same relation word; the two samples
// share one bag of words but different referents.
void build_crisscross(RandomSource& rng, const GenConfig& cfg, SceneBuild* out) {
  const bool vertical = rng.bernoulli(0.5);
  const int cat_a = rng.uniform_int(0, kNumCategories - 1);
  int cat_b = rng.uniform_int(0, kNumCategories - 2);
  if (cat_b >= cat_a) ++cat_b;
  const int color_a = rng.uniform_int(0, 3);
  const int color_b = rng.uniform_int(0, 3);
  const int size_a = rng.uniform_int(0, 1);
  const int size_b = rng.uniform_int(0, 1);

  auto jitter = [&](double v) { return v + rng.uniform(-0.03, 0.03); };
  const double lo = rng.uniform(0.24, 0.30), hi = rng.uniform(0.70, 0.76);

  auto make = [&](int cat, int color, int size_class, double u, double v) {
    SceneObject o;
    o.category = cat;
    o.color = color;
    o.size_class = size_class;
    const double side = rng.uniform(kSizeLo[size_class], std::min(kSizeHi[size_class], 0.34));
    o.box = vertical ? BoundingBox{jitter(u), jitter(v), side, side}
                     : BoundingBox{jitter(v), jitter(u), side, side};
    return o;
  };
  auto& objs = out->scene.objects;
  objs.push_back(make(cat_a, color_a, size_a, lo, lo));  // A at (col lo, row lo)
  objs.push_back(make(cat_b, color_b, size_b, lo, hi));  // B below it
  objs.push_back(make(cat_b, color_b, size_b, hi, lo));  // B in the other column
  objs.push_back(make(cat_a, color_a, size_a, hi, hi));  // A below that
  for (size_t i = 0; i < objs.size(); ++i) objs[i].draw_order = static_cast<int>(i);
  if (!all_in_frame(objs)) return;
  for (size_t i = 0; i < objs.size(); ++i) {
    for (size_t j = i + 1; j < objs.size(); ++j) {
      if (iou(objs[i].box, objs[j].box) > cfg.max_overlap_iou) return;
    }
  }

  const Relation rel = vertical ? Relation::above : Relation::left_of;
  const bool with_color = rng.bernoulli(0.5);
  std::vector<std::string> attrs_a, attrs_b;
  if (with_color) {
    attrs_a = {kColorWords[color_a]};
    attrs_b = {kColorWords[color_b]};
  }
  auto words_ab = compose_expression(attrs_a, cat_a, rel, attrs_b, cat_b);
  auto words_ba = compose_expression(attrs_b, cat_b, rel, attrs_a, cat_a);
  if (!resolves_to(words_ab, out->scene, 0, cfg)) return;
  if (!resolves_to(words_ba, out->scene, 2, cfg)) return;

  EmitSpec ea{0, words_ab, rel, true, -1};
  EmitSpec eb{2, words_ba, rel, true, -1};
  out->emits = {ea, eb};
  out->ok = true;
}

// Swappable scene: two identical-looking referents flank a landmark; the two
// emitted queries differ in exactly one relation word and flip the referent.
void build_swappable(RandomSource& rng, const GenConfig& cfg, SceneBuild* out) {
  const bool vertical = rng.bernoulli(0.5);
  const int cat_a = rng.uniform_int(0, kNumCategories - 1);
  int cat_b = rng.uniform_int(0, kNumCategories - 2);
  if (cat_b >= cat_a) ++cat_b;
  const int color_a = rng.uniform_int(0, 3);
  const int size_a = rng.uniform_int(0, 1);
  SceneObject lm = random_object(rng, cfg.texture_fraction);
  lm.category = cat_b;
  lm.size_class = rng.uniform_int(0, 1);
  lm.striped = false;
  lm.hollow = false;

  auto jitter = [&](double v) { return v + rng.uniform(-0.04, 0.04); };
  auto make_a = [&](double t) {
    SceneObject o;
    o.category = cat_a;
    o.color = color_a;
    o.size_class = size_a;
    const double side = rng.uniform(kSizeLo[size_a], std::min(kSizeHi[size_a], 0.30));
    const double u = jitter(0.5);
    o.box = vertical ? BoundingBox{u, t, side, side} : BoundingBox{t, u, side, side};
    return o;
  };
  auto& objs = out->scene.objects;
  objs.push_back(make_a(jitter(0.20)));
  {
    const double side = rng.uniform(kSizeLo[lm.size_class], std::min(kSizeHi[lm.size_class], 0.30));
    const double u = jitter(0.5), t = jitter(0.5);
    lm.box = vertical ? BoundingBox{u, t, side, side} : BoundingBox{t, u, side, side};
    objs.push_back(lm);
  }
  objs.push_back(make_a(jitter(0.80)));
  for (size_t i = 0; i < objs.size(); ++i) objs[i].draw_order = static_cast<int>(i);
  if (!all_in_frame(objs)) return;
  for (size_t i = 0; i < objs.size(); ++i) {
    for (size_t j = i + 1; j < objs.size(); ++j) {
      if (iou(objs[i].box, objs[j].box) > cfg.max_overlap_iou) return;
    }
  }

  const Relation rel_first = vertical ? Relation::above : Relation::left_of;
  const Relation rel_second = vertical ? Relation::below : Relation::right_of;
  const bool with_color = rng.bernoulli(0.5);
  std::vector<std::string> attrs_a;
  if (with_color) attrs_a = {kColorWords[color_a]};
  auto words_first = compose_expression(attrs_a, cat_a, rel_first, {}, cat_b);
  auto words_second = compose_expression(attrs_a, cat_a, rel_second, {}, cat_b);
  if (!resolves_to(words_first, out->scene, 0, cfg)) return;
  if (!resolves_to(words_second, out->scene, 2, cfg)) return;

  EmitSpec ea{0, words_first, rel_first, false, 0};
  EmitSpec eb{2, words_second, rel_second, false, 1};
  out->emits = {ea, eb};
  out->ok = true;
}

// Nested scene: a small object inside a large container, plus an identical
// decoy outside it, so "inside" is the only disambiguator.
void build_nested(RandomSource& rng, const GenConfig& cfg, SceneBuild* out) {
  const int cat_y = rng.uniform_int(0, kNumCategories - 1);
  int cat_x = rng.uniform_int(0, kNumCategories - 2);
  if (cat_x >= cat_y) ++cat_x;
  SceneObject y;
  y.category = cat_y;
  y.color = rng.uniform_int(0, 3);
  y.size_class = 2;
  y.hollow = rng.bernoulli(0.5);
  const double yside = rng.uniform(0.40, 0.48);
  y.box = {rng.uniform(yside / 2 + 0.02, 0.98 - yside / 2),
           rng.uniform(yside / 2 + 0.02, 0.98 - yside / 2), yside, yside};

  SceneObject x;
  x.category = cat_x;
  x.color = rng.uniform_int(0, 2);
  if (x.color >= y.color) ++x.color;  // keep the inner object visible
  x.size_class = 0;
  const double xside = rng.uniform(kSizeLo[0], 0.18);
  x.box = {y.box.cx + rng.uniform(-0.06, 0.06), y.box.cy + rng.uniform(-0.06, 0.06), xside,
           xside};
  if (!relation_holds(Relation::inside, x, y, cfg.relation_margin)) return;

  SceneObject decoy = x;
  bool placed = false;
  for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
    decoy.box = sample_box(rng, decoy.size_class);
    placed = iou(decoy.box, y.box) == 0.0 && placement_ok(decoy.box, {x}, cfg.max_overlap_iou);
  }
  if (!placed) return;

  auto& objs = out->scene.objects;
  objs = {y, x, decoy};  // container first so the inner object draws on top
  for (size_t i = 0; i < objs.size(); ++i) objs[i].draw_order = static_cast<int>(i);
  if (!all_in_frame(objs)) return;

  const bool with_color = rng.bernoulli(0.5);
  std::vector<std::string> attrs_x;
  if (with_color) attrs_x = {kColorWords[x.color]};
  auto words = compose_expression(attrs_x, cat_x, Relation::inside, {}, cat_y);
  if (!resolves_to(words, out->scene, 1, cfg)) return;

  EmitSpec e{1, words, Relation::inside, false, -1};
  out->emits = {e};
  out->ok = true;
}

SceneBuild generate_scene_build(uint64_t seed, const GenConfig& cfg) {
  RandomSource rng(mix_seed(seed, kSceneSalt));
  const double u = rng.uniform();
  SceneKind kind;
  if (u < cfg.frac_crisscross) kind = SceneKind::crisscross;
  else if (u < cfg.frac_crisscross + cfg.frac_swappable) kind = SceneKind::swappable;
  else if (u < cfg.frac_crisscross + cfg.frac_swappable + cfg.frac_nested) kind = SceneKind::nested;
  else kind = SceneKind::generic;

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    SceneBuild b;
    b.scene.seed = seed;
    b.scene.kind = kind;
    switch (kind) {
      case SceneKind::generic: build_generic(rng, cfg, &b); break;
      case SceneKind::crisscross: build_crisscross(rng, cfg, &b); break;
      case SceneKind::swappable: build_swappable(rng, cfg, &b); break;
      case SceneKind::nested: build_nested(rng, cfg, &b); break;
    }
    if (b.ok) return b;
  }
  throw GenerationError("scene constraints unsatisfiable for seed " + std::to_string(seed));
}

}  // namespace

Scene generate_scene(uint64_t seed, const GenConfig& cfg) {
  return generate_scene_build(seed, cfg).scene;
}

// ---------------------------------------------------------------------------
// Rasterizer
// ---------------------------------------------------------------------------

namespace {

bool point_in_shape(int category, double px, double py, double cx, double cy, double hw,
                    double hh) {
  if (hw <= 0 || hh <= 0) return false;
  const double dx = px - cx, dy = py - cy;
  // Pointy vertices get a 1.6px-wide strip to the box edge so the drawn
  // extent matches the stored box within one pixel at any size.
  const double cap = 0.8;
  switch (category) {
    case kCircle: {
      const double nx = dx / hw, ny = dy / hh;
      return nx * nx + ny * ny <= 1.0;
    }
    case kSquare:
      return std::abs(dx) <= hw && std::abs(dy) <= hh;
    case kTriangle: {
      // Apex at top-center, base along the bottom edge.
      const double t = (py - (cy - hh)) / (2.0 * hh);
      if (t < 0.0 || t > 1.0) return false;
      return std::abs(dx) <= std::max(t * hw, cap);
    }
    case kDiamond: {
      if (std::abs(dx) / hw + std::abs(dy) / hh <= 1.0) return true;
      if (std::abs(dx) <= cap && std::abs(dy) <= hh) return true;
      return std::abs(dy) <= cap && std::abs(dx) <= hw;
    }
  }
  return false;
}

void rasterize_object(const SceneObject& o, int image_size, float* img) {
  const double w = image_size;
  const double cx = o.box.cx * w, cy = o.box.cy * w;
  const double hw = o.box.w * w / 2.0, hh = o.box.h * w / 2.0;
  const double border = std::max(2.0, 0.16 * std::min(hw, hh) * 2.0);
  const double stripe_h = std::max(2.0, 2.0 * hh / 6.0);
  const auto& rgb = kPalette[static_cast<size_t>(o.color)];

  const int x0 = std::max(0, static_cast<int>(std::floor(cx - hw)) - 1);
  const int x1 = std::min(image_size - 1, static_cast<int>(std::ceil(cx + hw)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - hh)) - 1);
  const int y1 = std::min(image_size - 1, static_cast<int>(std::ceil(cy + hh)) + 1);
  for (int r = y0; r <= y1; ++r) {
    const double py = r + 0.5;
    for (int c = x0; c <= x1; ++c) {
      const double px = c + 0.5;
      if (!point_in_shape(o.category, px, py, cx, cy, hw, hh)) continue;
      if (o.hollow &&
          point_in_shape(o.category, px, py, cx, cy, hw - border, hh - border)) {
        continue;
      }
      float shade = 1.0f;
      if (o.striped && (static_cast<int>((py - (cy - hh)) / stripe_h) % 2) == 1) shade = 0.55f;
      float* px_out = img + (static_cast<size_t>(r) * image_size + c) * 3;
      px_out[0] = rgb[0] * shade;
      px_out[1] = rgb[1] * shade;
      px_out[2] = rgb[2] * shade;
    }
  }
}

}  // namespace

Tensor<float> render_scene(const Scene& scene, int image_size) {
  Tensor<float> img(Shape{image_size, image_size, 3});
  RandomSource noise(mix_seed(scene.seed, kRenderSalt));
  float* p = img.data();
  for (int i = 0; i < image_size * image_size; ++i) {
    const float v = 0.46f + static_cast<float>(noise.uniform(-0.05, 0.05));
    p[3 * i] = v;
    p[3 * i + 1] = v;
    p[3 * i + 2] = v;
  }
  std::vector<const SceneObject*> order;
  for (const auto& o : scene.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(),
                   [](const SceneObject* a, const SceneObject* b) {
                     return a->draw_order < b->draw_order;
                   });
  for (const auto* o : order) rasterize_object(*o, image_size, p);
  return img;
}

Tensor<float> render_object_isolated(const SceneObject& obj, int image_size) {
  Tensor<float> img(Shape{image_size, image_size, 3});
  rasterize_object(obj, image_size, img.data());
  return img;
}

// ---------------------------------------------------------------------------
// Split building and the manifest
// ---------------------------------------------------------------------------

TargetLabels SampleRecord::target() const {
  TargetLabels t;
  t.category = category;
  t.attributes.assign(kNumAttributes, 0);
  for (int i = 0; i < kNumAttributes; ++i) {
    t.attributes[static_cast<size_t>(i)] = (attribute_bits >> i) & 1;
  }
  t.box = box;
  return t;
}

namespace {

std::vector<SampleRecord> make_records(const SceneBuild& build, const GenConfig& cfg,
                                       const std::string& split) {
  std::vector<SampleRecord> out;
  const auto& vocab = Vocabulary::builtin();
  int emit_index = 0;
  for (const auto& e : build.emits) {
    const auto& obj = build.scene.objects[static_cast<size_t>(e.referent)];
    SampleRecord r;
    r.split = split;
    r.scene_seed = build.scene.seed;
    r.emit_index = emit_index++;
    r.referent = e.referent;
    r.words = e.words;
    const TokenSequence toks = tokenize(e.words, vocab, cfg.manifest_t_max);
    r.token_ids = toks.ids;
    r.true_len = toks.true_len;
    r.box = obj.box;
    r.category = obj.category;
    r.attribute_bits = obj.attribute_bits();
    r.relation = e.relation;
    r.order_critical = e.order_critical;
    r.swap_side = e.swap_side;
    r.image_size = cfg.image_size;
    out.push_back(std::move(r));
  }
  return out;
}

void fill_split(const GenConfig& cfg, uint64_t seed_base, int target_count,
                const std::string& split, std::vector<SampleRecord>* out) {
  uint64_t offset = 0;
  while (static_cast<int>(out->size()) < target_count) {
    if (offset >= cfg.seed_range_span) {
      throw GenerationError("seed range exhausted for split " + split);
    }
    const uint64_t seed = seed_base + offset++;
    const SceneBuild build = generate_scene_build(seed, cfg);
    for (auto& r : make_records(build, cfg, split)) {
      if (static_cast<int>(out->size()) >= target_count) break;
      out->push_back(std::move(r));
    }
  }
}

void fill_swap_split(const GenConfig& cfg, std::vector<SampleRecord>* out) {
  uint64_t offset = 0;
  int pair_id = 0;
  while (pair_id < cfg.swap_pairs) {
    if (offset >= cfg.seed_range_span) {
      throw GenerationError("seed range exhausted for swap split");
    }
    const uint64_t seed = cfg.swap_seed_base + offset++;
    const SceneBuild build = generate_scene_build(seed, cfg);
    if (build.scene.kind != SceneKind::swappable) continue;
    auto recs = make_records(build, cfg, "swap_test");
    if (recs.size() != 2) continue;
    // Oracle check: paired ground-truth boxes must differ.
    if (recs[0].box.cx == recs[1].box.cx && recs[0].box.cy == recs[1].box.cy &&
        recs[0].box.w == recs[1].box.w && recs[0].box.h == recs[1].box.h) {
      throw GenerationError("swap pair with identical ground-truth boxes, seed " +
                            std::to_string(seed));
    }
    recs[0].swap_pair = pair_id;
    recs[1].swap_pair = pair_id;
    out->push_back(std::move(recs[0]));
    out->push_back(std::move(recs[1]));
    ++pair_id;
  }
}

}  // namespace

DatasetBundle build_splits(const GenConfig& cfg) {
  cfg.validate();
  DatasetBundle b;
  b.config = cfg;
  fill_split(cfg, cfg.train_seed_base, cfg.train_count, "train", &b.train);
  fill_split(cfg, cfg.val_seed_base, cfg.val_count, "val", &b.val);
  fill_split(cfg, cfg.test_seed_base, cfg.test_count, "test", &b.test);
  fill_swap_split(cfg, &b.swap_test);
  return b;
}

Tensor<float> render_sample(const SampleRecord& rec, const GenConfig& cfg) {
  const Scene scene = generate_scene(rec.scene_seed, cfg);
  return render_scene(scene, cfg.image_size);
}

namespace {

json config_to_json(const GenConfig& c) {
  return json{
      {"image_size", c.image_size},
      {"min_objects", c.min_objects},
      {"max_objects", c.max_objects},
      {"duplicate_fraction", c.duplicate_fraction},
      {"same_color_fraction", c.same_color_fraction},
      {"frac_crisscross", c.frac_crisscross},
      {"frac_swappable", c.frac_swappable},
      {"frac_nested", c.frac_nested},
      {"max_overlap_iou", c.max_overlap_iou},
      {"relation_margin", c.relation_margin},
      {"texture_fraction", c.texture_fraction},
      {"max_retries", c.max_retries},
      {"manifest_t_max", c.manifest_t_max},
      {"train_count", c.train_count},
      {"val_count", c.val_count},
      {"test_count", c.test_count},
      {"swap_pairs", c.swap_pairs},
      {"train_seed_base", c.train_seed_base},
      {"val_seed_base", c.val_seed_base},
      {"test_seed_base", c.test_seed_base},
      {"swap_seed_base", c.swap_seed_base},
      {"seed_range_span", c.seed_range_span},
  };
}

GenConfig config_from_json(const json& j) {
  GenConfig c;
  c.image_size = j.at("image_size");
  c.min_objects = j.at("min_objects");
  c.max_objects = j.at("max_objects");
  c.duplicate_fraction = j.at("duplicate_fraction");
  c.same_color_fraction = j.at("same_color_fraction");
  c.frac_crisscross = j.at("frac_crisscross");
  c.frac_swappable = j.at("frac_swappable");
  c.frac_nested = j.at("frac_nested");
  c.max_overlap_iou = j.at("max_overlap_iou");
  c.relation_margin = j.at("relation_margin");
  c.texture_fraction = j.at("texture_fraction");
  c.max_retries = j.at("max_retries");
  c.manifest_t_max = j.at("manifest_t_max");
  c.train_count = j.at("train_count");
  c.val_count = j.at("val_count");
  c.test_count = j.at("test_count");
  c.swap_pairs = j.at("swap_pairs");
  c.train_seed_base = j.at("train_seed_base");
  c.val_seed_base = j.at("val_seed_base");
  c.test_seed_base = j.at("test_seed_base");
  c.swap_seed_base = j.at("swap_seed_base");
  c.seed_range_span = j.at("seed_range_span");
  return c;
}

json record_to_json(const SampleRecord& r) {
  std::string expr;
  for (size_t i = 0; i < r.words.size(); ++i) {
    if (i) expr += ' ';
    expr += r.words[i];
  }
  return json{
      {"split", r.split},
      {"scene_seed", r.scene_seed},
      {"emit_index", r.emit_index},
      {"referent", r.referent},
      {"expression", expr},
      {"token_ids", r.token_ids},
      {"true_len", r.true_len},
      {"box", {r.box.cx, r.box.cy, r.box.w, r.box.h}},
      {"category", r.category},
      {"attributes", r.attribute_bits},
      {"relation", relation_name(r.relation)},
      {"order_critical", r.order_critical},
      {"swap_pair", r.swap_pair},
      {"swap_side", r.swap_side},
      {"image_size", r.image_size},
  };
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.split = j.at("split");
  r.scene_seed = j.at("scene_seed");
  r.emit_index = j.at("emit_index");
  r.referent = j.at("referent");
  std::string expr = j.at("expression");
  std::string word;
  for (char ch : expr) {
    if (ch == ' ') {
      if (!word.empty()) r.words.push_back(word);
      word.clear();
    } else {
      word += ch;
    }
  }
  if (!word.empty()) r.words.push_back(word);
  r.token_ids = j.at("token_ids").get<std::vector<int>>();
  r.true_len = j.at("true_len");
  const auto& bx = j.at("box");
  r.box = {bx.at(0), bx.at(1), bx.at(2), bx.at(3)};
  r.category = j.at("category");
  r.attribute_bits = j.at("attributes");
  r.relation = relation_from_name(j.at("relation"));
  r.order_critical = j.at("order_critical");
  r.swap_pair = j.at("swap_pair");
  r.swap_side = j.at("swap_side");
  r.image_size = j.at("image_size");
  return r;
}

}  // namespace

void write_manifest(const DatasetBundle& bundle, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot open manifest for writing: " + path);
  json header{
      {"kind", "grounder-manifest"},
      {"version", 1},
      {"generator_version", kVersion},
      {"data", config_to_json(bundle.config)},
  };
  f << header.dump() << '\n';
  for (const auto* split : {&bundle.train, &bundle.val, &bundle.test, &bundle.swap_test}) {
    for (const auto& r : *split) f << record_to_json(r).dump() << '\n';
  }
}

DatasetBundle read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IntegrityError("manifest is empty: " + path);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("kind", "") != "grounder-manifest") {
    throw IntegrityError("not a grounder manifest: " + path);
  }
  if (header.at("version") != 1) {
    throw IntegrityError("unsupported manifest version in " + path);
  }
  DatasetBundle b;
  b.config = config_from_json(header.at("data"));
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw IntegrityError("manifest line " + std::to_string(line_no) + " is not valid");
    }
    SampleRecord r = record_from_json(j);
    if (r.split == "train") b.train.push_back(std::move(r));
    else if (r.split == "val") b.val.push_back(std::move(r));
    else if (r.split == "test") b.test.push_back(std::move(r));
    else if (r.split == "swap_test") b.swap_test.push_back(std::move(r));
    else throw IntegrityError("manifest line " + std::to_string(line_no) + ": unknown split");
  }
  return b;
}

}  // namespace grounder::synth
