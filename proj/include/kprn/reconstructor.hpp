#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kprn/grounder.hpp"
#include "kprn/querylang.hpp"

namespace kprn::recon {

// Attribute label vocabulary with training-split frequencies. File layout:
// `label count`, one per line. Loss weights are reciprocal relative
// frequencies, scaled so a uniformly common label weighs 1.
struct AttrVocab {
  std::vector<std::string> labels;
  std::vector<std::int64_t> counts;
  std::vector<double> weights;
  std::unordered_map<std::string, std::size_t> index;

  static AttrVocab from_counts(std::vector<std::string> labels_in,
                               std::vector<std::int64_t> counts_in) {
    AttrVocab v;
    v.labels = std::move(labels_in);
    v.counts = std::move(counts_in);
    KPRN_REQUIRE(v.labels.size() == v.counts.size(), "attr vocab: label/count size mismatch");
    double total = 0.0;
    for (auto c : v.counts) {
      KPRN_REQUIRE(c > 0, "attr vocab: counts must be positive");
      total += static_cast<double>(c);
    }
    double mean = v.counts.empty() ? 1.0 : total / static_cast<double>(v.counts.size());
    for (std::size_t i = 0; i < v.labels.size(); ++i) {
      v.weights.push_back(mean / static_cast<double>(v.counts[i]));
      v.index.emplace(v.labels[i], i);
    }
    return v;
  }

  static AttrVocab load(const std::string& path) {
    std::ifstream f(path);
    KPRN_DATA_REQUIRE(f.good(), "cannot open attribute vocabulary: ", path);
    std::vector<std::string> labels;
    std::vector<std::int64_t> counts;
    std::string label;
    std::int64_t count;
    while (f >> label >> count) {
      labels.push_back(lowercase(label));
      counts.push_back(count);
    }
    return from_counts(std::move(labels), std::move(counts));
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    KPRN_DATA_REQUIRE(f.good(), "cannot write attribute vocabulary: ", path);
    for (std::size_t i = 0; i < labels.size(); ++i) f << labels[i] << ' ' << counts[i] << '\n';
  }

  std::size_t size() const { return labels.size(); }

  bool knows(const std::string& label) const { return index.count(label) > 0; }
};

// One-layer fusion of each pair's [v_s; v_o] row.
inline diff::Var fuse_pairs(diff::TapeParams& tp, const grounder::PairFeatures& feats) {
  diff::Var rows = diff::concat_last({feats.vs, feats.vo});
  return diff::relu(diff::add(diff::matmul(rows, tp("rec.wv")), tp("rec.bv")));
}

// Score-weighted sum of the fused rows: a convex combination when the
// scores come out of a softmax.
inline diff::Var aggregate(diff::Var final_scores, diff::Var fused_rows) {
  KPRN_REQUIRE(final_scores.val().rank() == 1 && fused_rows.val().rank() == 2 &&
                   final_scores.val().shape[0] == fused_rows.val().shape[0],
               "aggregate: scores/rows shape mismatch");
  return diff::matmul(final_scores, fused_rows);
}

// Teacher-forced decoding: the fused visual feature is the first input step,
// then the gold tokens; the loss is the mean negative log-likelihood of each
// next gold token.
inline diff::Var reconstruction_loss(diff::TapeParams& tp, diff::Var f_vis,
                                     const std::vector<std::string>& tokens,
                                     const querylang::Vocab& vocab, std::int64_t decoder_hidden,
                                     std::size_t* unk_count = nullptr) {
  KPRN_REQUIRE(!tokens.empty(), "reconstruction_loss: empty target");
  std::size_t T = std::min(tokens.size(), querylang::kMaxQueryLen);

  std::vector<std::int64_t> targets(T);
  for (std::size_t t = 0; t < T; ++t) {
    targets[t] = vocab.index_or_unk(tokens[t]);
    if (targets[t] == querylang::Vocab::kUnk && unk_count) ++*unk_count;
  }

  diff::Tape& tape = tp.tape();
  diff::LstmVars dec = diff::lstm_vars(tp, "dec");
  diff::Var table = tp("dec.embed");
  diff::Var proj_w = tp("dec.proj.w");
  diff::Var proj_b = tp("dec.proj.b");
  diff::Var zero = tape.constant(diff::Tensor::zeros({decoder_hidden}));

  diff::LstmState s{zero, zero};
  diff::Var total;
  for (std::size_t t = 0; t < T; ++t) {
    diff::Var x = t == 0 ? f_vis : diff::embed_row(table, targets[t - 1]);
    s = diff::lstm_step(x, s, dec);
    diff::Var logits = diff::add(diff::matmul(s.h, proj_w), proj_b);
    diff::Var nll = diff::log_softmax_nll(logits, {targets[t]});
    total = t == 0 ? nll : diff::add(total, nll);
  }
  diff::Var inv_t = tape.constant(diff::Tensor::scalar(1.0 / static_cast<double>(T)));
  return diff::mul(total, inv_t);
}

// Multi-label attribute head over the score-weighted subject CNN features.
// Returns a zero constant when the query carries no attribute words.
inline diff::Var attribute_loss(diff::TapeParams& tp, diff::Var final_scores,
                                const std::vector<grounder::PairCandidate>& pairs,
                                const scene::SceneRecord& sc,
                                const std::vector<std::string>& attr_labels,
                                const AttrVocab& vocab) {
  diff::Tape& tape = tp.tape();
  if (attr_labels.empty() || vocab.size() == 0)
    return tape.constant(diff::Tensor::scalar(0.0));

  std::vector<std::vector<double>> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs)
    rows.push_back(scene::subject_cnn_feature(sc.proposals[static_cast<std::size_t>(p.subject)]));
  diff::Var cnn = grounder::gdetail::const_matrix(tape, rows);

  diff::Var pooled = diff::matmul(final_scores, cnn);
  diff::Var logits = diff::add(diff::matmul(pooled, tp("attr.w")), tp("attr.b"));

  std::vector<double> y(vocab.size(), 0.0);
  for (const auto& label : attr_labels) {
    auto it = vocab.index.find(label);
    KPRN_REQUIRE(it != vocab.index.end(), "attribute_loss: unknown label '", label, "'");
    y[it->second] = 1.0;
  }
  diff::Var targets = tape.constant(diff::Tensor::vec(y));
  diff::Var weights = tape.constant(diff::Tensor::vec(vocab.weights));
  return diff::weighted_bce(logits, targets, weights);
}

// The four training losses and their exact sum.
struct LossBundle {
  double sub = 0.0;
  double obj = 0.0;
  double lan = 0.0;
  double att = 0.0;
  double total = 0.0;
};

inline diff::Var total_loss(diff::Var loss_sub, diff::Var loss_obj, diff::Var loss_lan,
                            diff::Var loss_att, LossBundle* out = nullptr) {
  const char* names[] = {"loss_sub", "loss_obj", "loss_lan", "loss_att"};
  diff::Var parts[] = {loss_sub, loss_obj, loss_lan, loss_att};
  for (int i = 0; i < 4; ++i) {
    KPRN_REQUIRE(parts[i].val().is_scalar(), names[i], " must be scalar");
    if (!std::isfinite(parts[i].val().at(0)))
      throw NumericError(std::string("non-finite loss part: ") + names[i]);
  }
  diff::Var total = diff::add(diff::add(loss_sub, loss_obj), diff::add(loss_lan, loss_att));
  if (out) {
    out->sub = loss_sub.val().at(0);
    out->obj = loss_obj.val().at(0);
    out->lan = loss_lan.val().at(0);
    out->att = loss_att.val().at(0);
    out->total = total.val().at(0);
  }
  return total;
}

}  // namespace kprn::recon
