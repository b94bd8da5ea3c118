#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kprn/synthgen.hpp"
#include "kprn/trainkit.hpp"

namespace kprn::config {

using KvPairs = std::vector<std::pair<std::string, std::string>>;

// Flat key=value files; '#' starts a comment, blank lines ignored.
inline KvPairs parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  KPRN_DATA_REQUIRE(f.good(), "cannot open config file: ", path);
  KvPairs out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      std::size_t x = s.find_first_not_of(" \t");
      if (x == std::string::npos) return std::string();
      std::size_t y = s.find_last_not_of(" \t");
      return s.substr(x, y - x + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline std::pair<std::string, std::string> parse_override(const std::string& kv) {
  std::size_t eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value, got: " + kv);
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

namespace cfgdetail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(lowercase(item));
  return out;
}

}  // namespace cfgdetail

inline const char* train_keys() {
  return "mode hard_threshold attr loc obj dist lr lr_decay lr_decay_every iters "
         "eval_every checkpoint_every eval_slice seed embed_dim lstm_hidden att_hidden "
         "decoder_hidden rvis_dim";
}

inline void apply_train_key(train::TrainConfig& cfg, const std::string& key,
                            const std::string& value) {
  using namespace cfgdetail;
  if (key == "mode") {
    if (value == "soft") cfg.fwd.soft_mode = true;
    else if (value == "hard") cfg.fwd.soft_mode = false;
    else throw ConfigError("key 'mode': expected soft|hard, got '" + value + "'");
  } else if (key == "hard_threshold") cfg.fwd.hard_threshold = parse_double(key, value);
  else if (key == "attr") cfg.fwd.use_attr = parse_bool(key, value);
  else if (key == "loc") cfg.fwd.use_loc = parse_bool(key, value);
  else if (key == "obj") cfg.fwd.use_obj = parse_bool(key, value);
  else if (key == "dist") cfg.fwd.use_dist = parse_bool(key, value);
  else if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "lr_decay") cfg.lr_decay = parse_double(key, value);
  else if (key == "lr_decay_every") cfg.lr_decay_every = static_cast<int>(parse_int(key, value));
  else if (key == "iters") cfg.iters = static_cast<int>(parse_int(key, value));
  else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(key, value));
  else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(parse_int(key, value));
  else if (key == "eval_slice") cfg.eval_slice = static_cast<int>(parse_int(key, value));
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "embed_dim") cfg.dims.embed_dim = parse_int(key, value);
  else if (key == "lstm_hidden") cfg.dims.lstm_hidden = parse_int(key, value);
  else if (key == "att_hidden") cfg.dims.att_hidden = parse_int(key, value);
  else if (key == "decoder_hidden") cfg.dims.decoder_hidden = parse_int(key, value);
  else if (key == "rvis_dim") cfg.dims.rvis_dim = parse_int(key, value);
  else
    throw ConfigError("unknown train config key '" + key + "'; valid keys: " +
                      std::string(train_keys()));
  if (cfg.lr <= 0.0) throw ConfigError("lr must be positive");
}

inline const char* synth_keys() {
  return "scenes val_scenes image_w image_h proposals objects relation_fraction "
         "feature_noise label_noise near_radius seed shapes colors sizes";
}

inline void apply_synth_key(synth::SynthConfig& cfg, const std::string& key,
                            const std::string& value) {
  using namespace cfgdetail;
  if (key == "scenes") cfg.scenes = static_cast<int>(parse_int(key, value));
  else if (key == "val_scenes") cfg.val_scenes = static_cast<int>(parse_int(key, value));
  else if (key == "image_w") cfg.image_w = static_cast<int>(parse_int(key, value));
  else if (key == "image_h") cfg.image_h = static_cast<int>(parse_int(key, value));
  else if (key == "proposals") cfg.proposals_per_scene = static_cast<int>(parse_int(key, value));
  else if (key == "objects") cfg.objects_per_scene = static_cast<int>(parse_int(key, value));
  else if (key == "relation_fraction") cfg.relation_fraction = parse_double(key, value);
  else if (key == "feature_noise") cfg.feature_noise = parse_double(key, value);
  else if (key == "label_noise") cfg.label_noise = parse_double(key, value);
  else if (key == "near_radius") cfg.near_radius = parse_double(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "shapes") cfg.shapes = parse_list(value);
  else if (key == "colors") cfg.colors = parse_list(value);
  else if (key == "sizes") cfg.sizes = parse_list(value);
  else
    throw ConfigError("unknown gen config key '" + key + "'; valid keys: " +
                      std::string(synth_keys()));
}

inline train::TrainConfig train_config_from(const KvPairs& pairs) {
  train::TrainConfig cfg;
  for (const auto& [k, v] : pairs) apply_train_key(cfg, k, v);
  return cfg;
}

inline synth::SynthConfig synth_config_from(const KvPairs& pairs) {
  synth::SynthConfig cfg;
  for (const auto& [k, v] : pairs) apply_synth_key(cfg, k, v);
  return cfg;
}

// Ablation grid file: one cell per line, space-separated key=value overrides
// on top of the base config. '#' comments and blank lines are skipped.
inline std::vector<train::TrainConfig> parse_grid_file(const std::string& path,
                                                       const train::TrainConfig& base) {
  std::ifstream f(path);
  KPRN_DATA_REQUIRE(f.good(), "cannot open grid file: ", path);
  std::vector<train::TrainConfig> cells;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream is(line);
    std::string kv;
    train::TrainConfig cell = base;
    bool any = false;
    while (is >> kv) {
      auto [k, v] = parse_override(kv);
      try {
        apply_train_key(cell, k, v);
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
      any = true;
    }
    if (any) cells.push_back(cell);
  }
  return cells;
}

}  // namespace kprn::config
