#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kprn/model.hpp"
#include "kprn/scene.hpp"
#include "kprn/tape.hpp"
#include "kprn/wordvec.hpp"

namespace kprn::grounder {

// Runtime behaviour switches (the ablation axes).
struct ForwardConfig {
  bool soft_mode = true;
  double hard_threshold = 0.10;
  bool use_attr = true;
  bool use_loc = true;
  bool use_obj = true;
  bool use_dist = true;
};

struct AttentionScores {
  diff::Var raw_var;
  diff::Var norm_var;
  std::vector<double> raw;
  std::vector<double> normalized;
};

namespace gdetail {

inline diff::Var const_matrix(diff::Tape& tape, const std::vector<std::vector<double>>& rows) {
  KPRN_REQUIRE(!rows.empty(), "const_matrix: no rows");
  std::int64_t cols = static_cast<std::int64_t>(rows[0].size());
  std::vector<double> flat;
  flat.reserve(rows.size() * rows[0].size());
  for (const auto& r : rows) {
    KPRN_REQUIRE(static_cast<std::int64_t>(r.size()) == cols, "const_matrix: ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return tape.constant(
      diff::Tensor::matrix(static_cast<std::int64_t>(rows.size()), cols, std::move(flat)));
}

// v broadcast to n identical rows; keeps gradients flowing into v.
inline diff::Var tile_rows(diff::TapeParams& tp, diff::Var v, std::int64_t n) {
  const diff::Tensor& t = v.val();
  KPRN_REQUIRE(t.rank() == 1, "tile_rows: rank-1 input required");
  diff::Var ones = tp.tape().constant(
      diff::Tensor::matrix(n, t.shape[0], std::vector<double>(static_cast<std::size_t>(n * t.shape[0]), 1.0)));
  return diff::mul(ones, v);
}

}  // namespace gdetail

// Two-layer perceptron scoring each row of `rows`, softmax-normalized.
inline AttentionScores attention_scores(diff::TapeParams& tp, const std::string& prefix,
                                        diff::Var rows) {
  diff::Var h = diff::relu(diff::add(diff::matmul(rows, tp(prefix + ".w1")), tp(prefix + ".b1")));
  diff::Var raw = diff::add(diff::matmul(h, tp(prefix + ".w2")), tp(prefix + ".b2"));
  AttentionScores s;
  s.raw_var = raw;
  s.norm_var = diff::row_softmax(raw);
  s.raw = raw.val().v;
  s.normalized = s.norm_var.val().v;
  return s;
}

// Matching scores of each proposal against the subject word: rows are
// [feat_c3; feat_c4; emb_s], scored by the subject MLP.
inline AttentionScores subject_scores(diff::TapeParams& tp,
                                      const std::vector<scene::ProposalRecord>& proposals,
                                      const std::vector<double>& emb_s) {
  KPRN_REQUIRE(!proposals.empty(), "subject_scores: no proposals");
  std::vector<std::vector<double>> rows;
  rows.reserve(proposals.size());
  for (const auto& p : proposals) {
    std::vector<double> r = scene::subject_cnn_feature(p);
    r.insert(r.end(), emb_s.begin(), emb_s.end());
    rows.push_back(std::move(r));
  }
  return attention_scores(tp, "att.sub", gdetail::const_matrix(tp.tape(), rows));
}

// Object path scores use only the C4 feature: rows are [feat_c4; emb_o].
inline AttentionScores object_scores(diff::TapeParams& tp,
                                     const std::vector<scene::ProposalRecord>& proposals,
                                     const std::vector<double>& emb_o) {
  KPRN_REQUIRE(!proposals.empty(), "object_scores: no proposals");
  std::vector<std::vector<double>> rows;
  rows.reserve(proposals.size());
  for (const auto& p : proposals) {
    std::vector<double> r = p.feat_c4;
    r.insert(r.end(), emb_o.begin(), emb_o.end());
    rows.push_back(std::move(r));
  }
  return attention_scores(tp, "att.obj", gdetail::const_matrix(tp.tape(), rows));
}

// MSE between normalized attention and the semantic-similarity priors.
inline diff::Var knowledge_loss(diff::Tape& tape, diff::Var norm_scores,
                                const std::vector<double>& sims) {
  KPRN_REQUIRE(norm_scores.val().size() == static_cast<std::int64_t>(sims.size()),
               "knowledge_loss: length mismatch");
  diff::Var target = tape.constant(diff::Tensor::vec(sims));
  return diff::mse(norm_scores, target);
}

// Proposal with the maximum object attention score; ties go to the lowest id.
inline int select_object(const AttentionScores& scores) {
  return static_cast<int>(diff::argmax(scores.normalized));
}

struct Filtered {
  std::vector<int> indices;      // retained subject proposals
  std::vector<double> weights;   // soft mode only: the normalized scores
};

// Soft filter keeps everything, weighted by the normalized score. Hard
// filter keeps proposals at or above the threshold, falling back to the
// single argmax when nothing qualifies.
inline Filtered apply_filter(bool soft, double threshold, const AttentionScores& subject) {
  Filtered out;
  std::size_t n = subject.normalized.size();
  if (soft) {
    out.indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.indices[static_cast<std::size_t>(i)] = static_cast<int>(i);
    out.weights = subject.normalized;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (subject.normalized[i] >= threshold) out.indices.push_back(static_cast<int>(i));
  if (out.indices.empty()) out.indices.push_back(static_cast<int>(diff::argmax(subject.normalized)));
  return out;
}

// Eq-style adaptive weight: 1 at distance 0, strictly decreasing.
inline double distance_weight(double dist) {
  KPRN_REQUIRE(dist >= 0.0, "distance_weight: negative distance");
  return 100.0 / (dist + 100.0);
}

struct PairCandidate {
  int subject = -1;
  int object = -1;                      // -1 = null-object sentinel
  std::vector<double> subject_full;     // v_s (spatial block zeroed when loc off)
  std::vector<double> object_feat;      // empty when object == -1
  double omega = 1.0;
};

// One pair per retained subject. The object is the attention argmax among
// the other proposals (self-pairs excluded unless the scene has a single
// proposal). A null `object_norm` selects the learned sentinel instead.
inline std::vector<PairCandidate> build_pairs(const scene::SceneRecord& sc,
                                              const std::vector<int>& retained,
                                              const std::vector<double>* object_norm,
                                              const ForwardConfig& cfg) {
  std::vector<PairCandidate> pairs;
  pairs.reserve(retained.size());
  std::size_t n = sc.proposals.size();
  for (int si : retained) {
    PairCandidate pc;
    pc.subject = si;
    pc.subject_full = scene::subject_feature(sc.proposals[static_cast<std::size_t>(si)], sc);
    if (!cfg.use_loc) {
      std::size_t cnn = pc.subject_full.size() - 30;
      for (std::size_t k = cnn; k < pc.subject_full.size(); ++k) pc.subject_full[k] = 0.0;
    }
    if (object_norm != nullptr) {
      int best = -1;
      for (std::size_t j = 0; j < n; ++j) {
        if (static_cast<int>(j) == si && n > 1) continue;
        if (best < 0 || (*object_norm)[j] > (*object_norm)[static_cast<std::size_t>(best)])
          best = static_cast<int>(j);
      }
      pc.object = best;
      const auto& sub = sc.proposals[static_cast<std::size_t>(si)];
      const auto& obj = sc.proposals[static_cast<std::size_t>(best)];
      pc.object_feat = scene::object_feature(sub, obj);
      pc.omega = cfg.use_dist
                     ? distance_weight(scene::manhattan_center_distance(sub.box, obj.box))
                     : 1.0;
    }
    pairs.push_back(std::move(pc));
  }
  return pairs;
}

// Constant feature matrices for a homogeneous pair list (all real objects or
// all sentinel). vo is the tiled sentinel parameter in the latter case.
struct PairFeatures {
  diff::Var vs;
  diff::Var vo;
};

inline PairFeatures pair_feature_vars(diff::TapeParams& tp,
                                      const std::vector<PairCandidate>& pairs) {
  KPRN_REQUIRE(!pairs.empty(), "pair_feature_vars: no pairs");
  std::vector<std::vector<double>> vs_rows;
  vs_rows.reserve(pairs.size());
  for (const auto& p : pairs) vs_rows.push_back(p.subject_full);
  PairFeatures f;
  f.vs = gdetail::const_matrix(tp.tape(), vs_rows);
  if (pairs[0].object < 0) {
    f.vo = gdetail::tile_rows(tp, tp("null_obj"), static_cast<std::int64_t>(pairs.size()));
  } else {
    std::vector<std::vector<double>> vo_rows;
    vo_rows.reserve(pairs.size());
    for (const auto& p : pairs) vo_rows.push_back(p.object_feat);
    f.vo = gdetail::const_matrix(tp.tape(), vo_rows);
  }
  return f;
}

// Raw pair matching scores: MLP over [query vector; v_s; v_o] rows.
inline diff::Var pair_scores(diff::TapeParams& tp, const PairFeatures& feats, diff::Var pooled_query) {
  std::int64_t p = feats.vs.val().shape[0];
  diff::Var hq = gdetail::tile_rows(tp, pooled_query, p);
  diff::Var rows = diff::concat_last({hq, feats.vs, feats.vo});
  diff::Var h = diff::relu(diff::add(diff::matmul(rows, tp("att.pair.w1")), tp("att.pair.b1")));
  return diff::add(diff::matmul(h, tp("att.pair.w2")), tp("att.pair.b2"));
}

// Final matching distribution over the retained pairs. Soft mode multiplies
// in the subject attention (gradients flow through it); hard mode already
// filtered, so only the distance weight scales the pair score.
inline diff::Var final_scores(diff::TapeParams& tp, const ForwardConfig& cfg,
                              diff::Var pair_raw, diff::Var subject_norm,
                              const std::vector<PairCandidate>& pairs) {
  std::vector<double> omegas;
  omegas.reserve(pairs.size());
  for (const auto& p : pairs) omegas.push_back(p.omega);
  diff::Var omega = tp.tape().constant(diff::Tensor::vec(omegas));
  diff::Var pre = cfg.soft_mode ? diff::mul(diff::mul(subject_norm, pair_raw), omega)
                                : diff::mul(pair_raw, omega);
  return diff::row_softmax(pre);
}

// The scoring stage shared by training and inference: knowledge priors,
// subject/object attention, filtering, pair construction, query encoding,
// pairwise attention and the final distribution. No reconstruction here.
struct ScoringForward {
  AttentionScores subject;
  std::optional<AttentionScores> object;
  wordvec::KnowledgePriors priors;
  Filtered retained;
  std::vector<PairCandidate> pairs;
  PairFeatures feats;
  diff::Var pair_raw;
  diff::Var final_var;
  std::vector<double> final_values;
  querylang::EncodedQuery encoded;
  bool object_path = false;
};

inline ScoringForward score_query(diff::TapeParams& tp, const scene::SceneRecord& sc,
                                  const querylang::QueryRecord& q,
                                  const wordvec::EmbeddingTable& know,
                                  const querylang::Vocab& vocab, std::int64_t lstm_hidden,
                                  const ForwardConfig& cfg) {
  KPRN_REQUIRE(!sc.proposals.empty(), "score_query: scene without proposals");
  ScoringForward f;
  f.object_path = cfg.use_obj && q.has_object();

  std::vector<std::string> categories;
  categories.reserve(sc.proposals.size());
  for (const auto& p : sc.proposals) categories.push_back(p.category);
  f.priors = wordvec::knowledge_priors(know, categories, q.parsed.category,
                                       f.object_path ? q.parsed.rel_obj : "");

  f.subject = subject_scores(tp, sc.proposals, know.lookup_phrase(q.parsed.category));
  if (f.object_path)
    f.object = object_scores(tp, sc.proposals, know.lookup_phrase(q.parsed.rel_obj));

  f.retained = apply_filter(cfg.soft_mode, cfg.hard_threshold, f.subject);
  f.pairs = build_pairs(sc, f.retained.indices, f.object ? &f.object->normalized : nullptr, cfg);
  f.encoded = querylang::encode_query(tp, q.tokens, vocab, lstm_hidden);
  f.feats = pair_feature_vars(tp, f.pairs);
  f.pair_raw = pair_scores(tp, f.feats, f.encoded.pooled);
  f.final_var = final_scores(tp, cfg, f.pair_raw, f.subject.norm_var, f.pairs);
  f.final_values = f.final_var.val().v;
  return f;
}

struct GroundingResult {
  int subject_index = -1;
  scene::BBox subject_box;
  std::optional<int> object_index;
  std::optional<scene::BBox> object_box;
  std::vector<double> pair_scores;   // final distribution over retained pairs
  std::vector<int> pair_subjects;    // subject proposal per pair
};

// Inference: run the scoring stage and take the best pair.
inline GroundingResult ground(const scene::SceneRecord& sc, const querylang::QueryRecord& q,
                              const wordvec::EmbeddingTable& know, const querylang::Vocab& vocab,
                              const diff::ParamStore& params, std::int64_t lstm_hidden,
                              const ForwardConfig& cfg) {
  diff::Tape tape;
  diff::TapeParams tp(tape, params);
  ScoringForward f = score_query(tp, sc, q, know, vocab, lstm_hidden, cfg);

  std::size_t best = diff::argmax(f.final_values);
  const PairCandidate& pc = f.pairs[best];
  GroundingResult r;
  r.subject_index = pc.subject;
  r.subject_box = sc.proposals[static_cast<std::size_t>(pc.subject)].box;
  if (pc.object >= 0) {
    r.object_index = pc.object;
    r.object_box = sc.proposals[static_cast<std::size_t>(pc.object)].box;
  }
  r.pair_scores = f.final_values;
  for (const auto& p : f.pairs) r.pair_subjects.push_back(p.subject);
  return r;
}

}  // namespace kprn::grounder
