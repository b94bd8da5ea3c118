#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "kprn/common.hpp"
#include "kprn/querylang.hpp"

namespace kprn::scene {

struct BBox {
  double x_tl = 0.0, y_tl = 0.0, x_br = 0.0, y_br = 0.0;

  double width() const { return x_br - x_tl; }
  double height() const { return y_br - y_tl; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_tl + x_br); }
  double cy() const { return 0.5 * (y_tl + y_br); }
  bool valid() const { return x_tl < x_br && y_tl < y_br; }

  bool operator==(const BBox& o) const {
    return x_tl == o.x_tl && y_tl == o.y_tl && x_br == o.x_br && y_br == o.y_br;
  }
};

struct ProposalRecord {
  int id = 0;
  BBox box;
  std::string category;
  std::vector<double> feat_c3;
  std::vector<double> feat_c4;
};

struct SceneRecord {
  std::string image_id;
  double width = 0.0, height = 0.0;
  std::vector<ProposalRecord> proposals;
  std::vector<querylang::QueryRecord> queries;
  // Evaluation-only ground truth, one entry per query. Kept outside
  // QueryRecord so no training path can reach it.
  std::vector<std::optional<BBox>> gt_boxes;
};

// [x_tl/W, y_tl/H, x_br/W, y_br/H, area/(W*H)]
inline std::array<double, 5> absolute_location(const BBox& box, double W, double H) {
  KPRN_REQUIRE(box.valid(), "absolute_location: degenerate box");
  KPRN_REQUIRE(W > 0.0 && H > 0.0, "absolute_location: bad image size");
  return {box.x_tl / W, box.y_tl / H, box.x_br / W, box.y_br / H, box.area() / (W * H)};
}

// One relative-offset block of the other box against the reference box:
// [dx_tl/w, dy_tl/h, dx_br/w, dy_br/h, area_other/area_ref], delta = other - ref.
inline std::array<double, 5> offset_block(const BBox& ref, const BBox& other) {
  double w = ref.width(), h = ref.height();
  return {(other.x_tl - ref.x_tl) / w, (other.y_tl - ref.y_tl) / h,
          (other.x_br - ref.x_br) / w, (other.y_br - ref.y_br) / h,
          other.area() / ref.area()};
}

// Offsets to the 5 nearest same-category proposals (center distance,
// excluding the target itself), nearest first, zero-padded to 25 entries.
inline std::array<double, 25> relative_same_category(const ProposalRecord& target,
                                                     const SceneRecord& scene) {
  struct Neighbor {
    double dist;
    int id;
    const ProposalRecord* p;
  };
  std::vector<Neighbor> neighbors;
  for (const auto& p : scene.proposals) {
    if (p.id == target.id) continue;
    if (p.category != target.category) continue;
    double dx = p.box.cx() - target.box.cx();
    double dy = p.box.cy() - target.box.cy();
    neighbors.push_back({std::sqrt(dx * dx + dy * dy), p.id, &p});
  }
  std::sort(neighbors.begin(), neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.id < b.id;
  });

  std::array<double, 25> out{};
  std::size_t count = std::min<std::size_t>(5, neighbors.size());
  for (std::size_t k = 0; k < count; ++k) {
    auto block = offset_block(target.box, neighbors[k].p->box);
    for (std::size_t j = 0; j < 5; ++j) out[k * 5 + j] = block[j];
  }
  return out;
}

// Relative offsets of the object box against the subject box.
inline std::array<double, 5> object_offsets(const BBox& subject, const BBox& object) {
  KPRN_REQUIRE(subject.valid() && object.valid(), "object_offsets: degenerate box");
  return offset_block(subject, object);
}

// Subject feature: [feat_c3; feat_c4; absolute-5; relative-25].
inline std::vector<double> subject_feature(const ProposalRecord& p, const SceneRecord& scene) {
  std::vector<double> out;
  out.reserve(p.feat_c3.size() + p.feat_c4.size() + 30);
  out.insert(out.end(), p.feat_c3.begin(), p.feat_c3.end());
  out.insert(out.end(), p.feat_c4.begin(), p.feat_c4.end());
  auto abs5 = absolute_location(p.box, scene.width, scene.height);
  out.insert(out.end(), abs5.begin(), abs5.end());
  auto rel25 = relative_same_category(p, scene);
  out.insert(out.end(), rel25.begin(), rel25.end());
  return out;
}

// CNN-only subject feature: [feat_c3; feat_c4].
inline std::vector<double> subject_cnn_feature(const ProposalRecord& p) {
  std::vector<double> out;
  out.reserve(p.feat_c3.size() + p.feat_c4.size());
  out.insert(out.end(), p.feat_c3.begin(), p.feat_c3.end());
  out.insert(out.end(), p.feat_c4.begin(), p.feat_c4.end());
  return out;
}

// Object feature: [feat_c4 of the object; offsets against the subject].
inline std::vector<double> object_feature(const ProposalRecord& subject,
                                          const ProposalRecord& object) {
  std::vector<double> out;
  out.reserve(object.feat_c4.size() + 5);
  out.insert(out.end(), object.feat_c4.begin(), object.feat_c4.end());
  auto off = object_offsets(subject.box, object.box);
  out.insert(out.end(), off.begin(), off.end());
  return out;
}

inline double manhattan_center_distance(const BBox& a, const BBox& b) {
  return std::abs(a.cx() - b.cx()) + std::abs(a.cy() - b.cy());
}

inline double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x_br, b.x_br) - std::max(a.x_tl, b.x_tl));
  double iy = std::max(0.0, std::min(a.y_br, b.y_br) - std::max(a.y_tl, b.y_tl));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

}  // namespace kprn::scene
