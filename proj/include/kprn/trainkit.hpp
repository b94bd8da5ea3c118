#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "kprn/checkpoint.hpp"
#include "kprn/dataset.hpp"
#include "kprn/grounder.hpp"
#include "kprn/model.hpp"
#include "kprn/reconstructor.hpp"
#include "kprn/wordvec.hpp"

namespace kprn::train {

struct TrainConfig {
  grounder::ForwardConfig fwd;  // mode, threshold, ablation flags
  model::ModelDims dims;
  double lr = 4e-4;
  double lr_decay = 0.1;
  int lr_decay_every = 8000;
  int iters = 30000;
  int eval_every = 1000;
  int checkpoint_every = 1000;
  int eval_slice = 200;  // held-out queries used for the periodic eval
  std::uint64_t seed = 1;

  double lr_at(std::int64_t iteration) const {
    return lr * std::pow(lr_decay, static_cast<double>(iteration / lr_decay_every));
  }
};

// Everything loaded from a dataset directory. The vocabulary is rebuilt from
// the train split in first-occurrence order, so the same files always give
// the same indices.
struct DatasetBundle {
  std::vector<scene::SceneRecord> train;
  std::vector<scene::SceneRecord> val;
  wordvec::EmbeddingTable know = wordvec::EmbeddingTable(1, {});
  querylang::Lexicons lexicons;
  recon::AttrVocab attrs;
  querylang::Vocab vocab;
  model::FeatureDims feat;
};

inline void check_feature_dims(const std::vector<scene::SceneRecord>& scenes,
                               model::FeatureDims& feat, const std::string& what) {
  for (const auto& sc : scenes)
    for (const auto& p : sc.proposals) {
      if (feat.c3 == 0 && feat.c4 == 0) {
        feat.c3 = static_cast<std::int64_t>(p.feat_c3.size());
        feat.c4 = static_cast<std::int64_t>(p.feat_c4.size());
        KPRN_DATA_REQUIRE(feat.c3 > 0 && feat.c4 > 0, what, ": empty CNN features");
      }
      KPRN_DATA_REQUIRE(static_cast<std::int64_t>(p.feat_c3.size()) == feat.c3 &&
                            static_cast<std::int64_t>(p.feat_c4.size()) == feat.c4,
                        what, ": inconsistent feature dims in ", sc.image_id);
    }
}

inline DatasetBundle load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  auto path = [&](const char* name) {
    fs::path p = fs::path(dir) / name;
    KPRN_DATA_REQUIRE(fs::exists(p), "dataset file missing: ", p.string());
    return p.string();
  };

  DatasetBundle d;
  d.train = scene::load_scenes(path("train.jsonl"));
  d.val = scene::load_scenes(path("val.jsonl"));
  KPRN_DATA_REQUIRE(!d.train.empty(), "empty train split in ", dir);
  d.know = wordvec::load_embeddings_file(path("embeddings.txt"));
  d.lexicons = querylang::Lexicons::load(path("colors.txt"), path("sizes.txt"),
                                         path("locations.txt"), path("nouns.txt"));
  d.attrs = recon::AttrVocab::load(path("attributes.txt"));

  check_feature_dims(d.train, d.feat, "train");
  check_feature_dims(d.val, d.feat, "val");
  d.feat.know_dim = d.know.dim();

  for (const auto& sc : d.train)
    for (const auto& q : sc.queries)
      for (const auto& t : q.tokens) d.vocab.add(t);

  // the attribute head trains on the train split only, so only its labels
  // must exist in the vocabulary
  for (const auto& sc : d.train)
    for (const auto& q : sc.queries)
      for (const auto& label : q.attr_labels)
        if (!d.attrs.knows(label))
          throw ConfigError("attribute label '" + label + "' missing from attributes.txt");
  return d;
}

inline diff::ParamStore init_model(const DatasetBundle& data, const TrainConfig& cfg) {
  return model::init_params(cfg.dims, data.feat, data.vocab.size(),
                            static_cast<std::int64_t>(data.attrs.size()), cfg.seed);
}

// One image = one optimizer step. Losses are averaged over the image's
// queries before the single Adam update.
inline recon::LossBundle train_step(const scene::SceneRecord& sc, diff::ParamStore& params,
                                    diff::AdamState& adam, const DatasetBundle& data,
                                    const TrainConfig& cfg) {
  KPRN_REQUIRE(!sc.queries.empty(), "train_step: image without queries: ", sc.image_id);
  diff::Tape tape;
  diff::TapeParams tp(tape, params);

  diff::Var sum_sub, sum_obj, sum_lan, sum_att;
  for (std::size_t qi = 0; qi < sc.queries.size(); ++qi) {
    const auto& q = sc.queries[qi];
    grounder::ScoringForward f =
        grounder::score_query(tp, sc, q, data.know, data.vocab, cfg.dims.lstm_hidden, cfg.fwd);

    diff::Var loss_sub = grounder::knowledge_loss(tape, f.subject.norm_var, f.priors.sim_subject);
    diff::Var loss_obj = f.object
                             ? grounder::knowledge_loss(tape, f.object->norm_var, f.priors.sim_object)
                             : tape.constant(diff::Tensor::scalar(0.0));

    diff::Var fused = recon::fuse_pairs(tp, f.feats);
    diff::Var f_vis = recon::aggregate(f.final_var, fused);
    diff::Var loss_lan =
        recon::reconstruction_loss(tp, f_vis, q.tokens, data.vocab, cfg.dims.decoder_hidden);

    diff::Var loss_att = cfg.fwd.use_attr
                             ? recon::attribute_loss(tp, f.final_var, f.pairs, sc, q.attr_labels, data.attrs)
                             : tape.constant(diff::Tensor::scalar(0.0));

    sum_sub = qi == 0 ? loss_sub : diff::add(sum_sub, loss_sub);
    sum_obj = qi == 0 ? loss_obj : diff::add(sum_obj, loss_obj);
    sum_lan = qi == 0 ? loss_lan : diff::add(sum_lan, loss_lan);
    sum_att = qi == 0 ? loss_att : diff::add(sum_att, loss_att);
  }
  diff::Var inv_b =
      tape.constant(diff::Tensor::scalar(1.0 / static_cast<double>(sc.queries.size())));
  recon::LossBundle bundle;
  diff::Var total = recon::total_loss(diff::mul(sum_sub, inv_b), diff::mul(sum_obj, inv_b),
                                      diff::mul(sum_lan, inv_b), diff::mul(sum_att, inv_b), &bundle);

  diff::GradMap grads = tape.backward(total);
  diff::adam_step(params, grads, adam);
  return bundle;
}

struct EvalRow {
  std::string image_id;
  std::string query;
  scene::BBox predicted;
  std::optional<scene::BBox> object_box;
  std::optional<scene::BBox> gt;
  double iou = 0.0;
  bool correct = false;
  bool skipped = false;
};

struct EvalResult {
  double accuracy = 0.0;
  std::int64_t evaluated = 0;
  std::int64_t correct = 0;
  std::int64_t skipped = 0;
  std::vector<EvalRow> rows;
};

// IoU@0.5 grounding accuracy. Queries without ground truth are skipped and
// counted; reconstruction is never touched here.
inline EvalResult evaluate(const std::vector<scene::SceneRecord>& split,
                           const diff::ParamStore& params, const DatasetBundle& data,
                           const TrainConfig& cfg,
                           std::size_t max_queries = static_cast<std::size_t>(-1)) {
  EvalResult res;
  std::size_t seen = 0;
  for (const auto& sc : split) {
    for (std::size_t qi = 0; qi < sc.queries.size(); ++qi) {
      if (seen >= max_queries) break;
      ++seen;
      const auto& q = sc.queries[qi];
      EvalRow row;
      row.image_id = sc.image_id;
      for (std::size_t t = 0; t < q.tokens.size(); ++t)
        row.query += (t ? " " : "") + q.tokens[t];
      if (qi >= sc.gt_boxes.size() || !sc.gt_boxes[qi].has_value()) {
        row.skipped = true;
        ++res.skipped;
        res.rows.push_back(std::move(row));
        continue;
      }
      grounder::GroundingResult g = grounder::ground(sc, q, data.know, data.vocab, params,
                                                     cfg.dims.lstm_hidden, cfg.fwd);
      row.predicted = g.subject_box;
      row.object_box = g.object_box;
      row.gt = sc.gt_boxes[qi];
      row.iou = scene::iou(g.subject_box, *row.gt);
      row.correct = row.iou > 0.5;
      ++res.evaluated;
      if (row.correct) ++res.correct;
      res.rows.push_back(std::move(row));
    }
  }
  KPRN_DATA_REQUIRE(res.evaluated > 0, "evaluate: no queries with ground truth");
  res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.evaluated);
  return res;
}

struct MetricsRow {
  std::int64_t iteration = 0;
  recon::LossBundle loss;
  double eval_acc = 0.0;
  double seconds = 0.0;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  KPRN_DATA_REQUIRE(f.good(), "cannot write metrics: ", path);
  f << "iteration,loss_sub,loss_obj,loss_lan,loss_att,total,eval_acc,seconds\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(r.iteration), r.loss.sub, r.loss.obj, r.loss.lan,
                  r.loss.att, r.loss.total, r.eval_acc, r.seconds);
    f << buf;
  }
}

struct TrainResult {
  diff::ParamStore params;
  diff::AdamState adam;
  std::vector<MetricsRow> metrics;
  std::int64_t iterations = 0;
};

// Seeded shuffled visit order, reshuffled each epoch. Derived from the seed
// and epoch index alone so a resumed run sees the same order.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed_stream(seed, 0xD474 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

// Full schedule: cyclic seeded-shuffled images, lr decay, periodic small
// eval and checkpointing. `out_dir` empty = keep everything in memory.
inline TrainResult train_loop(const DatasetBundle& data, const TrainConfig& cfg,
                              const std::string& out_dir = "",
                              const diff::Checkpoint* resume = nullptr) {
  namespace fs = std::filesystem;
  TrainResult res;
  std::int64_t start_iter = 0;
  if (resume != nullptr) {
    res.params = resume->params;
    res.adam = resume->adam;
    start_iter = resume->iteration;
  } else {
    res.params = init_model(data, cfg);
    res.adam.hyper.lr = cfg.lr;
  }
  res.params.set_trainable(true);

  if (!out_dir.empty()) fs::create_directories(out_dir);
  auto ckpt_path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;

  auto t0 = std::chrono::steady_clock::now();
  recon::LossBundle last_loss;
  for (std::int64_t it = start_iter + 1; it <= cfg.iters; ++it) {
    std::int64_t epoch = (it - 1) / static_cast<std::int64_t>(n);
    if (epoch != order_epoch) {
      order = epoch_order(n, cfg.seed, epoch);
      order_epoch = epoch;
    }
    const auto& sc = data.train[order[static_cast<std::size_t>((it - 1) % static_cast<std::int64_t>(n))]];

    res.adam.hyper.lr = cfg.lr_at(it);
    try {
      last_loss = train_step(sc, res.params, res.adam, data, cfg);
    } catch (const NumericError& e) {
      if (!out_dir.empty())
        diff::save_checkpoint(ckpt_path("checkpoint_abort.txt"), res.params, res.adam, it - 1);
      throw NumericError(detail::concat_msg("iteration ", it, " on ", sc.image_id, ": ", e.what(),
                                            " (losses so far: total=", last_loss.total, ")"));
    }

    if (cfg.eval_every > 0 && it % cfg.eval_every == 0) {
      MetricsRow row;
      row.iteration = it;
      row.loss = last_loss;
      if (!data.val.empty())
        row.eval_acc = evaluate(data.val, res.params, data, cfg,
                                static_cast<std::size_t>(cfg.eval_slice))
                           .accuracy;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.metrics.push_back(row);
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0)
      diff::save_checkpoint(ckpt_path("checkpoint.txt"), res.params, res.adam, it);
  }
  res.iterations = cfg.iters;
  if (!out_dir.empty()) {
    diff::save_checkpoint(ckpt_path("checkpoint.txt"), res.params, res.adam, cfg.iters);
    write_metrics_csv(ckpt_path("metrics.csv"), res.metrics);
  }
  return res;
}

// ---- ablation grid ----

struct AblationRow {
  std::string label;
  double accuracy = 0.0;
  bool failed = false;
  std::string error;
};

inline std::string ablation_label(const TrainConfig& cfg) {
  std::string label;
  auto append = [&](const std::string& part) {
    if (!label.empty()) label += '+';
    label += part;
  };
  if (cfg.fwd.use_attr) append("attr");
  if (cfg.fwd.use_loc) append("loc");
  if (cfg.fwd.use_obj) append("obj");
  if (cfg.fwd.soft_mode) {
    append("soft");
  } else {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "hard(%.2f)", cfg.fwd.hard_threshold);
    append(buf);
  }
  if (cfg.fwd.use_dist) append("dist");
  return label;
}

// Trains and evaluates one run per cell, every cell from the same seed.
// A failing cell is marked FAILED and the rest continue.
inline std::vector<AblationRow> run_ablation(const DatasetBundle& data,
                                             const std::vector<TrainConfig>& cells) {
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row;
    row.label = ablation_label(cell);
    try {
      TrainResult tr = train_loop(data, cell);
      row.accuracy = evaluate(data.val, tr.params, data, cell).accuracy;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace kprn::train
