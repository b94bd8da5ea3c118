#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kprn/dataset.hpp"
#include "kprn/querylang.hpp"
#include "kprn/scene.hpp"
#include "kprn/wordvec.hpp"

namespace kprn::synth {

struct SynthConfig {
  int scenes = 200;      // training scenes
  int val_scenes = 50;
  int image_w = 320;
  int image_h = 320;
  int proposals_per_scene = 8;
  int objects_per_scene = 0;  // 0 = auto: 3/4 of the proposals, clamped to [2, 12]
  double relation_fraction = 0.6;
  double feature_noise = 0.05;   // sigma of the Gaussian on the one-hot features
  double label_noise = 0.10;     // chance a proposal category is wrong
  double near_radius = 100.0;    // "near" relation cutoff, pixels
  std::uint64_t seed = 1;

  std::vector<std::string> shapes = {"square", "circle", "triangle", "star", "diamond", "hexagon"};
  std::vector<std::string> colors = {"red", "blue", "green", "yellow", "purple", "orange"};
  std::vector<std::string> sizes = {"big", "small"};
  std::vector<std::string> relations = {"left-of", "right-of", "above", "below", "near"};

  int objects() const {
    if (objects_per_scene > 0) return objects_per_scene;
    return std::clamp(3 * proposals_per_scene / 4, 2, 12);
  }

  void validate() const {
    if (scenes < 1 || val_scenes < 0) throw ConfigError("synth: need at least one train scene");
    if (proposals_per_scene < 1) throw ConfigError("synth: proposals_per_scene must be >= 1");
    if (objects() > proposals_per_scene)
      throw ConfigError("synth: more objects than proposals per scene");
    if (relation_fraction > 0.0 && objects() < 3)
      throw ConfigError("synth: relation queries need at least 3 objects per scene");
    if (relation_fraction < 0.0 || relation_fraction > 1.0)
      throw ConfigError("synth: relation_fraction must be in [0,1]");
    if (shapes.empty() || colors.empty() || sizes.empty())
      throw ConfigError("synth: empty lexicon");
    // box sizes are absolute pixels, so small canvases cannot host them
    if (image_w < 160 || image_h < 160) throw ConfigError("synth: image smaller than 160px");
  }

  querylang::Lexicons lexicons() const {
    querylang::Lexicons lx;
    lx.colors.insert(colors.begin(), colors.end());
    lx.sizes.insert(sizes.begin(), sizes.end());
    lx.nouns.insert(shapes.begin(), shapes.end());
    for (const char* w : {"left", "right", "top", "bottom", "middle", "center"})
      lx.locations.insert(w);
    return lx;
  }
};

struct SynthObject {
  std::string shape, color, size;
  scene::BBox box;
  int group = -1;  // twin pairs share a group id
};

namespace sdetail {

inline bool relation_holds(const std::string& rel, const scene::BBox& a, const scene::BBox& b,
                           double near_radius) {
  if (rel == "left-of") return a.cx() < b.cx();
  if (rel == "right-of") return a.cx() > b.cx();
  if (rel == "above") return a.cy() < b.cy();
  if (rel == "below") return a.cy() > b.cy();
  if (rel == "near") return scene::manhattan_center_distance(a, b) <= near_radius;
  throw ContractViolation("unknown relation: " + rel);
}

inline bool matches_desc(const SynthObject& o, const std::string& color, const std::string& size,
                         const std::string& shape) {
  if (!color.empty() && o.color != color) return false;
  if (!size.empty() && o.size != size) return false;
  return o.shape == shape;
}

// Literal query semantics over the placed objects. Attribute form when `rel`
// is empty; otherwise the subject description must stand in `rel` to some
// object matching the landmark description.
struct QuerySpec {
  std::string s_color, s_size, s_shape;
  std::string rel;
  std::string l_color, l_shape;
};

inline std::vector<int> semantic_referents(const std::vector<SynthObject>& objects,
                                           const QuerySpec& spec, double near_radius) {
  std::vector<int> out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (!matches_desc(objects[i], spec.s_color, spec.s_size, spec.s_shape)) continue;
    if (spec.rel.empty()) {
      out.push_back(static_cast<int>(i));
      continue;
    }
    for (std::size_t j = 0; j < objects.size(); ++j) {
      if (j == i) continue;
      if (!matches_desc(objects[j], spec.l_color, "", spec.l_shape)) continue;
      if (relation_holds(spec.rel, objects[i].box, objects[j].box, near_radius)) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

inline std::vector<std::string> relation_tokens(const std::string& rel) {
  if (rel == "left-of") return {"left", "of"};
  if (rel == "right-of") return {"right", "of"};
  return {rel};
}

inline std::vector<double> one_hot(const std::vector<std::string>& lexicon,
                                   const std::string& word) {
  std::vector<double> v(lexicon.size(), 0.0);
  for (std::size_t i = 0; i < lexicon.size(); ++i)
    if (lexicon[i] == word) {
      v[i] = 1.0;
      return v;
    }
  throw ContractViolation("word not in lexicon: " + word);
}

}  // namespace sdetail

// Surrogate CNN features: noisy one-hot attribute encodings. C3 carries the
// lower-level attributes (color, size), C4 the shape plus color.
inline std::pair<std::vector<double>, std::vector<double>> synth_cnn_feature(
    const std::string& shape, const std::string& color, const std::string& size,
    const SynthConfig& cfg, Rng& rng) {
  std::vector<double> c3 = sdetail::one_hot(cfg.colors, color);
  std::vector<double> sz = sdetail::one_hot(cfg.sizes, size);
  c3.insert(c3.end(), sz.begin(), sz.end());
  std::vector<double> c4 = sdetail::one_hot(cfg.shapes, shape);
  std::vector<double> co = sdetail::one_hot(cfg.colors, color);
  c4.insert(c4.end(), co.begin(), co.end());
  for (double& x : c3) x += rng.normal(0.0, cfg.feature_noise);
  for (double& x : c4) x += rng.normal(0.0, cfg.feature_noise);
  return {std::move(c3), std::move(c4)};
}

struct BuiltScene {
  scene::SceneRecord record;
  std::vector<SynthObject> objects;
  std::vector<int> target_object;  // per query, the referent object index
};

namespace sdetail {

inline scene::BBox sample_box(const SynthConfig& cfg, const std::string& size, Rng& rng) {
  double lo = size == "big" ? 55.0 : 25.0;
  double hi = size == "big" ? 85.0 : 40.0;
  double w = rng.uniform(lo, hi);
  double h = rng.uniform(lo, hi);
  double x = rng.uniform(2.0, cfg.image_w - w - 2.0);
  double y = rng.uniform(2.0, cfg.image_h - h - 2.0);
  return {x, y, x + w, y + h};
}

inline bool place_objects(const SynthConfig& cfg, std::vector<SynthObject>& objects, Rng& rng) {
  for (auto& o : objects) {
    bool placed = false;
    for (int tries = 0; tries < 200 && !placed; ++tries) {
      scene::BBox b = sample_box(cfg, o.size, rng);
      bool clear = true;
      for (const auto& other : objects) {
        if (&other == &o) break;
        if (scene::iou(b, other.box) > 0.1) {
          clear = false;
          break;
        }
      }
      if (clear) {
        o.box = b;
        placed = true;
      }
    }
    if (!placed) return false;
  }
  return true;
}

// Jittered duplicate of `src` with IoU against it inside [0.3, 0.5). The
// upper bound stays below the evaluation threshold so each query keeps a
// single correct proposal.
inline bool jitter_box(const SynthConfig& cfg, const scene::BBox& src, Rng& rng,
                       scene::BBox* out) {
  for (int tries = 0; tries < 400; ++tries) {
    double dx = rng.uniform(-0.55, 0.55) * src.width();
    double dy = rng.uniform(-0.55, 0.55) * src.height();
    double s = rng.uniform(0.8, 1.25);
    double w = src.width() * s;
    double h = src.height() * s;
    double x = std::clamp(src.cx() + dx - w / 2.0, 0.0, cfg.image_w - w);
    double y = std::clamp(src.cy() + dy - h / 2.0, 0.0, cfg.image_h - h);
    scene::BBox b{x, y, x + w, y + h};
    double v = scene::iou(b, src);
    if (v >= 0.30 && v < 0.50) {
      *out = b;
      return true;
    }
  }
  return false;
}

}  // namespace sdetail

// One scene: objects with unique (color, shape) per group, twin pairs for
// relational targets, one unambiguous query per object, proposals = true
// boxes plus jittered duplicates. Returns false when the sampled layout
// cannot satisfy the uniqueness checks; the caller re-rolls with a new seed.
inline bool try_build_scene(const SynthConfig& cfg, const std::string& image_id,
                            std::uint64_t scene_seed, BuiltScene* out) {
  Rng rng(scene_seed);
  const int want = cfg.objects();
  const querylang::Lexicons lx = cfg.lexicons();

  // attribute tuples: distinct (color, shape) per group
  std::vector<SynthObject> objects;
  std::set<std::pair<std::string, std::string>> used_cs;
  int group = 0;
  while (static_cast<int>(objects.size()) < want) {
    bool twins = rng.uniform() < cfg.relation_fraction &&
                 static_cast<int>(objects.size()) + 2 <= want && want >= 3;
    std::string color, shape;
    bool found = false;
    for (int tries = 0; tries < 200 && !found; ++tries) {
      color = rng.pick(cfg.colors);
      shape = rng.pick(cfg.shapes);
      found = !used_cs.count({color, shape});
    }
    if (!found) return false;
    used_cs.insert({color, shape});
    std::string size = rng.pick(cfg.sizes);
    SynthObject o{shape, color, size, {}, group};
    objects.push_back(o);
    if (twins) {
      SynthObject t = o;
      t.size = rng.pick(cfg.sizes);
      objects.push_back(t);
    }
    ++group;
  }
  if (!sdetail::place_objects(cfg, objects, rng)) return false;

  // one query per object
  std::vector<querylang::QueryRecord> queries;
  std::vector<int> targets;
  for (std::size_t ti = 0; ti < objects.size(); ++ti) {
    const SynthObject& t = objects[ti];
    bool is_twin = false;
    for (std::size_t j = 0; j < objects.size(); ++j)
      if (j != ti && objects[j].group == t.group) is_twin = true;

    std::vector<std::string> tokens;
    if (!is_twin) {
      sdetail::QuerySpec spec;
      spec.s_shape = t.shape;
      bool use_size = rng.uniform() < 0.35;
      if (use_size) spec.s_size = t.size; else spec.s_color = t.color;
      auto refs = sdetail::semantic_referents(objects, spec, cfg.near_radius);
      if (refs.size() != 1) {  // fall back to the other attribute form
        spec = {};
        spec.s_shape = t.shape;
        if (use_size) spec.s_color = t.color; else spec.s_size = t.size;
        refs = sdetail::semantic_referents(objects, spec, cfg.near_radius);
      }
      if (refs.size() != 1 || refs[0] != static_cast<int>(ti)) return false;
      tokens = {spec.s_color.empty() ? spec.s_size : spec.s_color, t.shape};
    } else {
      std::vector<std::string> rels = cfg.relations;
      rng.shuffle(rels);
      std::vector<int> landmarks;
      for (std::size_t j = 0; j < objects.size(); ++j)
        if (objects[j].group != t.group) landmarks.push_back(static_cast<int>(j));
      rng.shuffle(landmarks);

      bool done = false;
      for (const auto& rel : rels) {
        for (int lm : landmarks) {
          sdetail::QuerySpec spec;
          spec.s_color = t.color;
          spec.s_shape = t.shape;
          spec.rel = rel;
          spec.l_color = objects[static_cast<std::size_t>(lm)].color;
          spec.l_shape = objects[static_cast<std::size_t>(lm)].shape;
          auto refs = sdetail::semantic_referents(objects, spec, cfg.near_radius);
          if (refs.size() == 1 && refs[0] == static_cast<int>(ti)) {
            tokens = {t.color, t.shape};
            auto rt = sdetail::relation_tokens(rel);
            tokens.insert(tokens.end(), rt.begin(), rt.end());
            tokens.push_back(spec.l_color);
            tokens.push_back(spec.l_shape);
            done = true;
            break;
          }
        }
        if (done) break;
      }
      if (!done) return false;
    }
    queries.push_back(querylang::parse_attributes(tokens, lx));
    targets.push_back(static_cast<int>(ti));
  }

  // proposals: true boxes first, then jittered duplicates of cycled sources
  scene::SceneRecord rec;
  rec.image_id = image_id;
  rec.width = cfg.image_w;
  rec.height = cfg.image_h;
  int next_id = 0;
  for (const auto& o : objects) {
    scene::ProposalRecord p;
    p.id = next_id++;
    p.box = o.box;
    p.category = o.shape;
    if (rng.uniform() < cfg.label_noise && cfg.shapes.size() > 1) {
      std::string wrong = o.shape;
      while (wrong == o.shape) wrong = rng.pick(cfg.shapes);
      p.category = wrong;
    }
    auto [c3, c4] = synth_cnn_feature(o.shape, o.color, o.size, cfg, rng);
    p.feat_c3 = std::move(c3);
    p.feat_c4 = std::move(c4);
    rec.proposals.push_back(std::move(p));
  }
  std::vector<int> sources;
  for (int k = 0; k < cfg.proposals_per_scene - static_cast<int>(objects.size()); ++k)
    sources.push_back(k % static_cast<int>(objects.size()));
  rng.shuffle(sources);
  for (int src : sources) {
    const SynthObject& o = objects[static_cast<std::size_t>(src)];
    scene::BBox jb;
    if (!sdetail::jitter_box(cfg, o.box, rng, &jb)) return false;
    scene::ProposalRecord p;
    p.id = next_id++;
    p.box = jb;
    p.category = o.shape;
    if (rng.uniform() < cfg.label_noise && cfg.shapes.size() > 1) {
      std::string wrong = o.shape;
      while (wrong == o.shape) wrong = rng.pick(cfg.shapes);
      p.category = wrong;
    }
    auto [c3, c4] = synth_cnn_feature(o.shape, o.color, o.size, cfg, rng);
    p.feat_c3 = std::move(c3);
    p.feat_c4 = std::move(c4);
    rec.proposals.push_back(std::move(p));
  }

  rec.queries = std::move(queries);
  for (int t : targets) rec.gt_boxes.push_back(objects[static_cast<std::size_t>(t)].box);

  out->record = std::move(rec);
  out->objects = std::move(objects);
  out->target_object = std::move(targets);
  return true;
}

inline BuiltScene build_scene(const SynthConfig& cfg, const std::string& image_id,
                              std::uint64_t stream) {
  BuiltScene bs;
  for (int attempt = 0; attempt < 64; ++attempt) {
    if (try_build_scene(cfg, image_id, seed_stream(cfg.seed, stream * 64 + attempt), &bs))
      return bs;
  }
  throw ConfigError("synth: could not build a valid scene for " + image_id +
                    "; configuration is likely unsatisfiable");
}

// Deterministic quasi-orthogonal word vectors: seeded unit vectors pushed
// apart until every distinct pair has |cosine| below the bound. "unk" is the
// zero vector.
inline std::vector<std::pair<std::string, std::vector<double>>> build_embedding_fixture(
    const std::vector<std::string>& words, int dim, std::uint64_t seed,
    double max_cos = 0.29) {
  Rng rng(seed_stream(seed, 0xE3B));
  std::vector<std::vector<double>> vecs(words.size(), std::vector<double>(dim));
  auto dotv = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto normalize = [&dotv](std::vector<double>& v) {
    double n = std::sqrt(dotv(v, v));
    for (double& x : v) x /= n;
  };
  for (auto& v : vecs) {
    for (double& x : v) x = rng.normal();
    normalize(v);
  }
  bool ok = false;
  for (int sweep = 0; sweep < 5000 && !ok; ++sweep) {
    ok = true;
    for (std::size_t i = 0; i < vecs.size(); ++i)
      for (std::size_t j = i + 1; j < vecs.size(); ++j) {
        double c = dotv(vecs[i], vecs[j]);
        if (std::abs(c) > max_cos) {
          ok = false;
          for (int k = 0; k < dim; ++k) {
            double vi = vecs[i][k], vj = vecs[j][k];
            vecs[i][k] = vi - 0.2 * c * vj;
            vecs[j][k] = vj - 0.2 * c * vi;
          }
          normalize(vecs[i]);
          normalize(vecs[j]);
        }
      }
  }
  KPRN_REQUIRE(ok, "embedding fixture: repulsion failed to reach cosine bound");

  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (std::size_t i = 0; i < words.size(); ++i) out.emplace_back(words[i], vecs[i]);
  out.emplace_back(wordvec::kUnknownWord, std::vector<double>(dim, 0.0));
  return out;
}

inline std::vector<std::string> fixture_words(const SynthConfig& cfg) {
  std::vector<std::string> words;
  auto push_all = [&](const std::vector<std::string>& src) {
    for (const auto& w : src)
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  };
  push_all(cfg.shapes);
  push_all(cfg.colors);
  push_all(cfg.sizes);
  push_all({"left", "right", "top", "bottom", "middle", "center"});
  push_all({"of", "above", "below", "near", "next", "to", "on"});
  return words;
}

struct GenSummary {
  int train_scenes = 0, val_scenes = 0;
  std::size_t train_queries = 0, val_queries = 0;
  std::size_t vocabulary_words = 0;
};

namespace sdetail {

inline void write_wordlist(const std::string& path, const std::vector<std::string>& words) {
  std::ofstream f(path, std::ios::binary);
  KPRN_DATA_REQUIRE(f.good(), "cannot write lexicon: ", path);
  for (const auto& w : words) f << w << '\n';
}

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace sdetail

// Emits train/val JSONL files, the embedding fixture, the lexicon files and
// the attribute-frequency file into `out_dir`.
inline GenSummary generate_dataset(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  GenSummary sum;
  std::map<std::string, std::int64_t> attr_counts;

  std::vector<scene::SceneRecord> train, val;
  for (int i = 0; i < cfg.scenes; ++i) {
    BuiltScene bs = build_scene(cfg, "train_" + std::to_string(i), static_cast<std::uint64_t>(i));
    sum.train_queries += bs.record.queries.size();
    for (const auto& q : bs.record.queries)
      for (const auto& label : q.attr_labels) ++attr_counts[label];
    train.push_back(std::move(bs.record));
  }
  for (int i = 0; i < cfg.val_scenes; ++i) {
    BuiltScene bs = build_scene(cfg, "val_" + std::to_string(i),
                                (1ULL << 20) + static_cast<std::uint64_t>(i));
    sum.val_queries += bs.record.queries.size();
    val.push_back(std::move(bs.record));
  }
  scene::save_scenes(path("train.jsonl"), train);
  scene::save_scenes(path("val.jsonl"), val);

  sdetail::write_wordlist(path("colors.txt"), cfg.colors);
  sdetail::write_wordlist(path("sizes.txt"), cfg.sizes);
  sdetail::write_wordlist(path("locations.txt"), {"left", "right", "top", "bottom", "middle", "center"});
  sdetail::write_wordlist(path("nouns.txt"), cfg.shapes);

  {
    std::ofstream f(path("attributes.txt"), std::ios::binary);
    KPRN_DATA_REQUIRE(f.good(), "cannot write attribute file");
    for (const auto& [label, count] : attr_counts) f << label << ' ' << count << '\n';
  }

  auto fixture = build_embedding_fixture(fixture_words(cfg), 16, cfg.seed);
  {
    std::ofstream f(path("embeddings.txt"), std::ios::binary);
    KPRN_DATA_REQUIRE(f.good(), "cannot write embedding fixture");
    for (const auto& [word, vec] : fixture) {
      f << word;
      for (double x : vec) f << ' ' << sdetail::fmt_double(x);
      f << '\n';
    }
    sum.vocabulary_words = fixture.size();
  }

  sum.train_scenes = cfg.scenes;
  sum.val_scenes = cfg.val_scenes;
  return sum;
}

}  // namespace kprn::synth
