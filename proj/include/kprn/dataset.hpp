#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kprn/scene.hpp"

namespace kprn::scene {

// JSON Lines dataset: one scene document per line. Serialization uses
// shortest-round-trip doubles, so load -> save reproduces files byte for byte.

namespace jsonio {

using nlohmann::json;

inline json box_to_json(const BBox& b) { return json::array({b.x_tl, b.y_tl, b.x_br, b.y_br}); }

inline BBox box_from_json(const json& j, const char* what) {
  KPRN_DATA_REQUIRE(j.is_array() && j.size() == 4, "dataset: ", what, " must be a 4-array");
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  KPRN_DATA_REQUIRE(b.valid(), "dataset: degenerate ", what);
  return b;
}

inline json scene_to_json(const SceneRecord& s) {
  json jp = json::array();
  for (const auto& p : s.proposals) {
    jp.push_back({{"id", p.id},
                  {"box", box_to_json(p.box)},
                  {"category", p.category},
                  {"feat_c3", p.feat_c3},
                  {"feat_c4", p.feat_c4}});
  }
  json jq = json::array();
  for (std::size_t i = 0; i < s.queries.size(); ++i) {
    const auto& q = s.queries[i];
    json entry = {{"tokens", q.tokens},
                  {"parsed",
                   {{"category", q.parsed.category},
                    {"color", q.parsed.color},
                    {"size", q.parsed.size},
                    {"abs_loc", q.parsed.abs_loc},
                    {"rel_loc", q.parsed.rel_loc},
                    {"rel_obj", q.parsed.rel_obj},
                    {"generic", q.parsed.generic}}},
                  {"attr_labels", q.attr_labels}};
    if (i < s.gt_boxes.size() && s.gt_boxes[i].has_value())
      entry["gt_box"] = box_to_json(*s.gt_boxes[i]);
    jq.push_back(std::move(entry));
  }
  return {{"image_id", s.image_id},
          {"width", s.width},
          {"height", s.height},
          {"proposals", std::move(jp)},
          {"queries", std::move(jq)}};
}

inline SceneRecord scene_from_json(const json& j) {
  SceneRecord s;
  s.image_id = j.at("image_id").get<std::string>();
  s.width = j.at("width").get<double>();
  s.height = j.at("height").get<double>();
  KPRN_DATA_REQUIRE(s.width > 0 && s.height > 0, "dataset: bad image size for ", s.image_id);
  for (const auto& jp : j.at("proposals")) {
    ProposalRecord p;
    p.id = jp.at("id").get<int>();
    p.box = box_from_json(jp.at("box"), "proposal box");
    p.category = jp.at("category").get<std::string>();
    KPRN_DATA_REQUIRE(!p.category.empty(), "dataset: empty proposal category in ", s.image_id);
    p.feat_c3 = jp.at("feat_c3").get<std::vector<double>>();
    p.feat_c4 = jp.at("feat_c4").get<std::vector<double>>();
    s.proposals.push_back(std::move(p));
  }
  KPRN_DATA_REQUIRE(!s.proposals.empty(), "dataset: scene without proposals: ", s.image_id);
  for (const auto& jq : j.at("queries")) {
    querylang::QueryRecord q;
    q.tokens = jq.at("tokens").get<std::vector<std::string>>();
    KPRN_DATA_REQUIRE(!q.tokens.empty(), "dataset: query without tokens in ", s.image_id);
    const auto& jp = jq.at("parsed");
    q.parsed.category = jp.at("category").get<std::string>();
    q.parsed.color = jp.at("color").get<std::string>();
    q.parsed.size = jp.at("size").get<std::string>();
    q.parsed.abs_loc = jp.at("abs_loc").get<std::string>();
    q.parsed.rel_loc = jp.at("rel_loc").get<std::string>();
    q.parsed.rel_obj = jp.at("rel_obj").get<std::string>();
    q.parsed.generic = jp.at("generic").get<std::string>();
    q.attr_labels = jq.at("attr_labels").get<std::vector<std::string>>();
    if (jq.contains("gt_box") && !jq.at("gt_box").is_null())
      s.gt_boxes.push_back(box_from_json(jq.at("gt_box"), "gt box"));
    else
      s.gt_boxes.push_back(std::nullopt);
    s.queries.push_back(std::move(q));
  }
  return s;
}

}  // namespace jsonio

inline std::vector<SceneRecord> load_scenes(const std::string& path) {
  std::ifstream f(path);
  KPRN_DATA_REQUIRE(f.good(), "cannot open dataset file: ", path);
  std::vector<SceneRecord> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    KPRN_DATA_REQUIRE(!j.is_discarded(), "dataset: invalid JSON at ", path, ":", line_no);
    try {
      scenes.push_back(jsonio::scene_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(detail::concat_msg("dataset: ", path, ":", line_no, ": ", e.what()));
    }
  }
  return scenes;
}

inline void save_scenes(const std::string& path, const std::vector<SceneRecord>& scenes) {
  std::ofstream f(path, std::ios::binary);
  KPRN_DATA_REQUIRE(f.good(), "cannot open dataset file for writing: ", path);
  for (const auto& s : scenes) f << jsonio::scene_to_json(s).dump() << '\n';
  KPRN_DATA_REQUIRE(f.good(), "dataset write failed: ", path);
}

}  // namespace kprn::scene
