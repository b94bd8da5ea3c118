// Acceptance suite: one pass/fail line per criterion. Run all criteria by
// default, or a single one with `--only N`. Exit code = number of failures.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "brute_force.hpp"
#include "kprn/config.hpp"
#include "kprn/synthgen.hpp"
#include "kprn/trainkit.hpp"
#include "oracle_utils.hpp"

#ifndef KPRN_DATA_DIR
#define KPRN_DATA_DIR "data"
#endif

using namespace kprn;
using kprn::diff::Tape;
using kprn::diff::TapeParams;
using kprn::diff::Tensor;
using kprn::diff::Var;

namespace {

namespace fs = std::filesystem;

struct Check {
  bool ok = true;
  std::ostringstream log;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      log << "    FAILED: " << what << "\n";
    }
  }
  void note(const std::string& what) { log << "    " << what << "\n"; }
};

std::string acc_dir(const char* name) {
  auto p = fs::temp_directory_path() / name;
  fs::create_directories(p);
  return p.string();
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

bool criterion_gradients(Check& c) {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(811);

  auto check_fd = [&](const char* what, diff::ParamStore& ps, const oracle::BuildFn& build) {
    auto rep = oracle::gradient_report(ps, build);
    c.expect(rep.max_rel_err < 1e-4,
             std::string(what) + ": max rel err " + std::to_string(rep.max_rel_err) + " at " +
                 rep.worst);
  };

  {  // catalog ops in one composite graph (dims <= 8)
    diff::ParamStore ps;
    oracle::fill_tensor(ps.add("w1", {6, 8}), rng);
    oracle::fill_tensor(ps.add("b1", {8}), rng);
    oracle::fill_tensor(ps.add("w2", {8, 4}), rng);
    oracle::fill_tensor(ps.add("b2", {4}), rng);
    oracle::fill_tensor(ps.add("emb", {5, 6}), rng);
    oracle::fill_tensor(ps.add("scale", {}), rng);
    check_fd("op catalog", ps, [](TapeParams& tp) {
      Var x = diff::embed_lookup(tp("emb"), {0, 2, 4});
      Var h = diff::relu(diff::add(diff::matmul(x, tp("w1")), tp("b1")));
      Var logits = diff::add(diff::matmul(h, tp("w2")), tp("b2"));
      Var nll = diff::log_softmax_nll(logits, {1, 0, 3});
      Var sm = diff::row_softmax(logits);
      Var probe = tp.tape().constant(Tensor::matrix(3, 4, std::vector<double>(12, 0.3)));
      Var l2 = diff::mse(diff::mul(sm, probe), probe);
      Var y = tp.tape().constant(Tensor::vec({1, 0, 1, 0}));
      Var w = tp.tape().constant(Tensor::vec({0.5, 2, 1, 1.5}));
      Var bce = diff::weighted_bce(diff::matmul(tp("b1"), tp("w2")), y, w);
      Var pooled = diff::mean(diff::concat_last({diff::tanh_op(h), diff::sigmoid(h)}));
      return diff::add(diff::add(nll, diff::mul(l2, tp("scale"))), diff::add(bce, pooled));
    });
  }
  {  // lstm_step
    diff::ParamStore ps;
    Rng prng(812);
    diff::add_lstm_params(ps, "cell", 4, 5, prng);
    for (auto& [name, t] : ps) oracle::fill_tensor(t, rng, 0.6);
    check_fd("lstm_step", ps, [](TapeParams& tp) {
      diff::LstmVars w = diff::lstm_vars(tp, "cell");
      Var zero = tp.tape().constant(Tensor::zeros({5}));
      diff::LstmState s{zero, zero};
      s = diff::lstm_step(tp.tape().constant(Tensor::vec({0.2, -0.5, 0.7, 0.1})), s, w);
      s = diff::lstm_step(tp.tape().constant(Tensor::vec({-0.3, 0.4, 0.0, 0.6})), s, w);
      return diff::mean(diff::concat_last({s.h, s.c}));
    });
  }

  // shared tiny model fixture for the composite paths
  scene::SceneRecord sc;
  sc.image_id = "fd";
  sc.width = sc.height = 100;
  {
    scene::ProposalRecord a, b;
    a.id = 0;
    a.box = {10, 10, 40, 40};
    a.category = "cat";
    a.feat_c3 = {0.9, 0.1};
    a.feat_c4 = {0.8, 0.2};
    b.id = 1;
    b.box = {50, 50, 90, 90};
    b.category = "dog";
    b.feat_c3 = {0.2, 0.7};
    b.feat_c4 = {0.1, 0.9};
    sc.proposals = {a, b};
  }
  std::istringstream kin("cat 1 0 0\ndog 0 1 0\n");
  wordvec::EmbeddingTable know = wordvec::load_embeddings(kin);
  querylang::Vocab vocab;
  for (const char* w : {"red", "cat", "left", "of", "dog"}) vocab.add(w);
  querylang::QueryRecord q;
  q.tokens = {"red", "cat", "left", "of", "dog"};
  q.parsed.category = "cat";
  q.parsed.rel_obj = "dog";
  q.attr_labels = {"red"};
  model::ModelDims dims;
  dims.embed_dim = 3;
  dims.lstm_hidden = 4;
  dims.att_hidden = 5;
  dims.decoder_hidden = 4;
  dims.rvis_dim = 5;
  model::FeatureDims feat;
  feat.c3 = 2;
  feat.c4 = 2;
  feat.know_dim = 3;
  recon::AttrVocab av = recon::AttrVocab::from_counts({"red"}, {1});
  grounder::ForwardConfig fcfg;

  {  // encode_query
    diff::ParamStore ps = model::init_params(dims, feat, vocab.size(), 1, 31);
    check_fd("encode_query", ps, [&](TapeParams& tp) {
      auto e = querylang::encode_query(tp, q.tokens, vocab, dims.lstm_hidden);
      Var acc = e.pooled;
      for (const auto& h : e.h_states) acc = diff::add(acc, h);
      return diff::mean(acc);
    });
  }
  {  // both attention MLP paths (subject scores and pair scores)
    diff::ParamStore ps = model::init_params(dims, feat, vocab.size(), 1, 32);
    check_fd("attention paths", ps, [&](TapeParams& tp) {
      auto f = grounder::score_query(tp, sc, q, know, vocab, dims.lstm_hidden, fcfg);
      Var ls = grounder::knowledge_loss(tp.tape(), f.subject.norm_var, f.priors.sim_subject);
      Var lo = grounder::knowledge_loss(tp.tape(), f.object->norm_var, f.priors.sim_object);
      Var probe = tp.tape().constant(Tensor::vec({0.25, 0.75}));
      return diff::add(diff::add(ls, lo), diff::mse(f.final_var, probe));
    });
  }
  {  // fuse_pair and reconstruction_loss (through the final scores)
    diff::ParamStore ps = model::init_params(dims, feat, vocab.size(), 1, 33);
    check_fd("fuse+reconstruction", ps, [&](TapeParams& tp) {
      auto f = grounder::score_query(tp, sc, q, know, vocab, dims.lstm_hidden, fcfg);
      Var fused = recon::fuse_pairs(tp, f.feats);
      Var f_vis = recon::aggregate(f.final_var, fused);
      Var lan = recon::reconstruction_loss(tp, f_vis, q.tokens, vocab, dims.decoder_hidden);
      Var att = recon::attribute_loss(tp, f.final_var, f.pairs, sc, q.attr_labels, av);
      return diff::add(lan, att);
    });
  }

  double secs = elapsed_s(t0);
  c.note("gradient suite runtime " + std::to_string(secs) + " s");
  c.expect(secs < 60.0, "runtime must stay under 60 s");
  return c.ok;
}

// ---------------------------------------------------------------- criterion 2

bool criterion_normalization(Check& c) {
  Rng rng(822);
  for (int trial = 0; trial < 300; ++trial) {
    std::int64_t n = 1 + rng.below(8);
    Tensor x = Tensor::zeros({n});
    for (double& v : x.v) v = rng.uniform(-12.0, 12.0);
    Tape tape;
    Var y = diff::row_softmax(tape.constant(x));
    double sum = 0.0;
    bool positive = true;
    for (std::int64_t i = 0; i < n; ++i) {
      sum += y.val().at(i);
      positive = positive && y.val().at(i) > 0.0;
    }
    c.expect(std::abs(sum - 1.0) <= 1e-9, "softmax row sums to 1 within 1e-9");
    c.expect(positive, "softmax outputs are positive");
    c.expect(diff::argmax(y.val().v) == diff::argmax(x.v), "softmax preserves the argmax");

    double scale = rng.uniform(0.01, 50.0);
    double shift = rng.uniform(-8.0, 8.0);
    Tensor xs = x, xa = x;
    for (double& v : xs.v) v *= scale;
    for (double& v : xa.v) v += shift;
    Tape t2;
    Var ys = diff::row_softmax(t2.constant(xs));
    Var ya = diff::row_softmax(t2.constant(xa));
    c.expect(diff::argmax(ys.val().v) == diff::argmax(y.val().v),
             "argmax invariant under positive scaling");
    c.expect(diff::argmax(ya.val().v) == diff::argmax(y.val().v),
             "argmax invariant under additive shifts");
  }

  c.expect(grounder::distance_weight(0.0) == 1.0, "omega(0) = 1");
  c.expect(grounder::distance_weight(100.0) == 0.5, "omega(100) = 0.5");
  double prev = 1.0;
  bool decreasing = true;
  for (double d = 1.0; d <= 2000.0; d += 7.0) {
    double w = grounder::distance_weight(d);
    decreasing = decreasing && w < prev;
    prev = w;
  }
  c.expect(decreasing, "omega strictly decreases with distance");
  return c.ok;
}

// ---------------------------------------------------------------- criterion 3

bool criterion_oracles(Check& c) {
  std::istringstream kin("cat 1 0 0\ndog 0 1 0\nrug 0.4 0.4 0.2\n");
  wordvec::EmbeddingTable know = wordvec::load_embeddings(kin);
  querylang::Vocab vocab;
  for (const char* w : {"cat", "dog", "rug", "left", "of", "big"}) vocab.add(w);

  model::ModelDims dims;
  dims.embed_dim = 3;
  dims.lstm_hidden = 4;
  dims.att_hidden = 5;
  dims.decoder_hidden = 4;
  dims.rvis_dim = 5;
  model::FeatureDims feat;
  feat.c3 = 2;
  feat.c4 = 2;
  feat.know_dim = 3;

  Rng rng(833);
  const char* cats[] = {"cat", "dog", "rug"};
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    int n = 1 + static_cast<int>(rng.below(5));
    scene::SceneRecord sc;
    sc.image_id = "acc";
    sc.width = sc.height = 240;
    for (int i = 0; i < n; ++i) {
      scene::ProposalRecord p;
      p.id = i;
      double x = rng.uniform(0, 180), y = rng.uniform(0, 180);
      p.box = {x, y, x + rng.uniform(12, 50), y + rng.uniform(12, 50)};
      p.category = cats[rng.below(3)];
      p.feat_c3 = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      p.feat_c4 = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      sc.proposals.push_back(std::move(p));
    }
    diff::ParamStore ps =
        model::init_params(dims, feat, vocab.size(), 0, 9000 + static_cast<std::uint64_t>(trial));

    querylang::QueryRecord q;
    bool with_obj = trial % 3 != 0;
    if (with_obj) {
      q.tokens = {"cat", "left", "of", "dog"};
      q.parsed.category = "cat";
      q.parsed.rel_obj = "dog";
    } else {
      q.tokens = {"big", "cat"};
      q.parsed.category = "cat";
    }

    grounder::ForwardConfig cfg;
    cfg.soft_mode = trial % 2 == 0;
    cfg.hard_threshold = 0.15;
    cfg.use_dist = trial % 5 != 0;

    // knowledge priors against a naive recompute
    std::vector<std::string> categories;
    for (const auto& p : sc.proposals) categories.push_back(p.category);
    wordvec::KnowledgePriors kp = wordvec::knowledge_priors(
        know, categories, q.parsed.category, with_obj ? q.parsed.rel_obj : "");
    for (std::size_t i = 0; i < categories.size(); ++i) {
      double naive =
          oracle::naive_cosine(know.lookup(categories[i]), know.lookup(q.parsed.category));
      worst = std::max(worst, std::abs(kp.sim_subject[i] - naive));
    }

    auto g = grounder::ground(sc, q, know, vocab, ps, dims.lstm_hidden, cfg);
    auto b = bf::ground(ps, sc, q, know, vocab, static_cast<std::size_t>(dims.lstm_hidden), cfg);
    c.expect(g.pair_scores.size() == b.final_scores.size(), "pair count matches oracle");
    for (std::size_t k = 0; k < b.final_scores.size(); ++k)
      worst = std::max(worst, std::abs(g.pair_scores[k] - b.final_scores[k]));
    c.expect(g.subject_index == b.best_subject, "grounded subject matches oracle");
    if (worst > 1e-9) break;
  }
  c.note("max |engine - oracle| over scoring runs: " + std::to_string(worst));
  c.expect(worst <= 1e-9, "scoring matches brute force to 1e-9");

  // IoU against the rasterized counting oracle, 1000 integer box pairs
  Rng brng(834);
  double worst_iou = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto rb = [&]() {
      double x = static_cast<double>(brng.below(30));
      double y = static_cast<double>(brng.below(30));
      return scene::BBox{x, y, x + 1 + static_cast<double>(brng.below(20)),
                         y + 1 + static_cast<double>(brng.below(20))};
    };
    scene::BBox a = rb(), b2 = rb();
    auto covers = [](const scene::BBox& box, int x, int y) {
      return x >= box.x_tl && x < box.x_br && y >= box.y_tl && y < box.y_br;
    };
    long long inter = 0, uni = 0;
    for (int x = 0; x < 52; ++x)
      for (int y = 0; y < 52; ++y) {
        bool ia = covers(a, x, y), ib = covers(b2, x, y);
        inter += ia && ib;
        uni += ia || ib;
      }
    double raster = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    worst_iou = std::max(worst_iou, std::abs(scene::iou(a, b2) - raster));
  }
  c.note("max |iou - raster| over 1000 pairs: " + std::to_string(worst_iou));
  c.expect(worst_iou <= 1e-6, "iou matches the counting oracle to 1e-6");
  return c.ok;
}

// ---------------------------------------------------------------- criterion 4

bool criterion_filters(Check& c) {
  Rng rng(844);
  for (int trial = 0; trial < 100; ++trial) {
    std::int64_t n = 2 + rng.below(7);
    Tensor raw = Tensor::zeros({n});
    for (double& v : raw.v) v = rng.uniform(-3.0, 3.0);
    Tape tape;
    grounder::AttentionScores s;
    s.raw = raw.v;
    s.norm_var = diff::row_softmax(tape.constant(raw));
    s.normalized = s.norm_var.val().v;

    double mn = *std::min_element(s.normalized.begin(), s.normalized.end());
    double mx = *std::max_element(s.normalized.begin(), s.normalized.end());

    auto below = grounder::apply_filter(false, mn * 0.5, s);
    auto zero = grounder::apply_filter(false, 0.0, s);
    c.expect(below.indices == zero.indices,
             "threshold below the minimum retains the same set as threshold 0");

    auto above = grounder::apply_filter(false, mx + 0.01, s);
    c.expect(above.indices.size() == 1 &&
                 above.indices[0] == static_cast<int>(diff::argmax(s.normalized)),
             "threshold above the maximum retains exactly the argmax");

    auto soft = grounder::apply_filter(true, 0.5, s);
    c.expect(soft.weights == s.normalized, "soft weights equal the softmax outputs exactly");
    c.expect(soft.indices.size() == s.normalized.size(), "soft retains every candidate");
  }
  return c.ok;
}

// ---------------------------------------------------------------- criterion 5

bool criterion_overfit(Check& c) {
  synth::SynthConfig scfg;
  scfg.scenes = 1;
  scfg.val_scenes = 1;
  scfg.proposals_per_scene = 6;
  scfg.seed = 55;
  std::string dir = acc_dir("kprn_acc_overfit");
  synth::generate_dataset(scfg, dir);
  train::DatasetBundle data = train::load_dataset_dir(dir);

  train::TrainConfig cfg;  // default model dims
  cfg.lr = 4e-4;
  cfg.seed = 7;

  auto run = [&]() {
    diff::ParamStore ps = train::init_model(data, cfg);
    diff::AdamState adam;
    adam.hyper.lr = cfg.lr;
    std::vector<double> totals;
    for (int step = 0; step < 50; ++step)
      totals.push_back(train::train_step(data.train[0], ps, adam, data, cfg).total);
    return totals;
  };
  std::vector<double> a = run();
  std::vector<double> b = run();
  c.note("initial total " + std::to_string(a.front()) + ", final " + std::to_string(a.back()));
  c.expect(a.back() < 0.5 * a.front(), "total loss falls below half its initial value");
  c.expect(a == b, "two seeded runs produce identical loss trajectories");
  return c.ok;
}

// ---------------------------------------------------------------- criterion 6

bool criterion_end_to_end(Check& c) {
  auto t0 = std::chrono::steady_clock::now();
  synth::SynthConfig scfg;
  scfg.scenes = 400;      // 5 queries per scene = 2000 train queries
  scfg.val_scenes = 100;  // 500 val queries
  scfg.proposals_per_scene = 8;
  scfg.objects_per_scene = 5;
  scfg.seed = 66;
  std::string dir = acc_dir("kprn_acc_e2e");
  synth::generate_dataset(scfg, dir);
  train::DatasetBundle data = train::load_dataset_dir(dir);
  std::size_t train_q = 0, val_q = 0;
  for (const auto& s : data.train) train_q += s.queries.size();
  for (const auto& s : data.val) val_q += s.queries.size();
  c.expect(train_q == 2000, "train split holds 2000 queries");
  c.expect(val_q == 500, "val split holds 500 queries");

  train::TrainConfig cfg;
  cfg.fwd.soft_mode = true;
  cfg.fwd.use_attr = true;
  cfg.fwd.use_dist = true;
  cfg.dims.embed_dim = 32;
  cfg.dims.lstm_hidden = 32;
  cfg.dims.att_hidden = 96;
  cfg.dims.decoder_hidden = 64;
  cfg.dims.rvis_dim = 64;
  cfg.iters = 5000;
  cfg.eval_every = 1000;
  cfg.eval_slice = 100;
  cfg.seed = 11;

  train::TrainResult res = train::train_loop(data, cfg);
  double acc = train::evaluate(data.val, res.params, data, cfg).accuracy;
  double secs = elapsed_s(t0);
  c.note("val accuracy " + std::to_string(acc) + " after 5000 iterations in " +
         std::to_string(secs) + " s");

  // Floor pinned from the calibration runs of this exact configuration:
  // seed 11 reaches 0.492; seeds 11..15 span 0.456-0.492. 0.42 leaves margin
  // for cross-platform libm drift and stays well above 3x the 1/8
  // random-pair baseline (0.375).
  const double kPinnedFloor = 0.42;
  c.expect(kPinnedFloor >= 3.0 * 0.125, "pinned floor respects the 3x baseline requirement");
  c.expect(acc >= kPinnedFloor, "val accuracy reaches the pinned floor");
  c.expect(secs < 900.0, "end-to-end run finishes within 15 minutes");
  return c.ok;
}

// ---------------------------------------------------------------- criterion 7

bool criterion_ablations(Check& c) {
  // (a) object attention on vs off, relation-rich data, 3 seeds
  synth::SynthConfig scfg;
  scfg.scenes = 150;
  scfg.val_scenes = 40;
  scfg.proposals_per_scene = 8;
  scfg.objects_per_scene = 6;
  scfg.relation_fraction = 1.0;
  scfg.seed = 77;
  std::string dir = acc_dir("kprn_acc_rel");
  synth::generate_dataset(scfg, dir);
  train::DatasetBundle data = train::load_dataset_dir(dir);

  train::TrainConfig base;
  base.dims.embed_dim = 32;
  base.dims.lstm_hidden = 32;
  base.dims.att_hidden = 64;
  base.dims.decoder_hidden = 64;
  base.dims.rvis_dim = 64;
  base.iters = 1500;
  base.eval_every = 0;

  double mean_on = 0.0, mean_off = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    train::TrainConfig on = base;
    on.seed = seed;
    train::TrainConfig off = on;
    off.fwd.use_obj = false;
    double acc_on =
        train::evaluate(data.val, train::train_loop(data, on).params, data, on).accuracy;
    double acc_off =
        train::evaluate(data.val, train::train_loop(data, off).params, data, off).accuracy;
    c.note("seed " + std::to_string(seed) + ": obj on " + std::to_string(acc_on) + ", obj off " +
           std::to_string(acc_off));
    mean_on += acc_on / 3.0;
    mean_off += acc_off / 3.0;
  }
  c.note("mean obj on " + std::to_string(mean_on) + " vs off " + std::to_string(mean_off));
  c.expect(mean_on > mean_off, "object attention helps on relation-rich data");

  // (b) many proposals: hard filter beats soft
  synth::SynthConfig big;
  big.scenes = 80;
  big.val_scenes = 30;
  big.proposals_per_scene = 50;
  big.objects_per_scene = 10;
  big.relation_fraction = 0.5;
  big.seed = 78;
  std::string big_dir = acc_dir("kprn_acc_many");
  synth::generate_dataset(big, big_dir);
  train::DatasetBundle big_data = train::load_dataset_dir(big_dir);

  double mean_hard = 0.0, mean_soft = 0.0;
  for (std::uint64_t seed : {4, 5, 6}) {
    train::TrainConfig soft = base;
    soft.iters = 1200;
    soft.seed = seed;
    soft.fwd.soft_mode = true;
    train::TrainConfig hard = soft;
    hard.fwd.soft_mode = false;
    hard.fwd.hard_threshold = 0.05;
    double acc_soft =
        train::evaluate(big_data.val, train::train_loop(big_data, soft).params, big_data, soft)
            .accuracy;
    double acc_hard =
        train::evaluate(big_data.val, train::train_loop(big_data, hard).params, big_data, hard)
            .accuracy;
    c.note("50 proposals, seed " + std::to_string(seed) + ": hard " + std::to_string(acc_hard) +
           " vs soft " + std::to_string(acc_soft));
    mean_hard += acc_hard / 3.0;
    mean_soft += acc_soft / 3.0;
  }
  c.note("mean hard " + std::to_string(mean_hard) + " vs soft " + std::to_string(mean_soft));
  c.expect(mean_hard > mean_soft, "hard filter beats soft with 50 proposals per scene");
  return c.ok;
}

// ---------------------------------------------------------------- criterion 8

bool criterion_schedule_io(Check& c) {
  train::TrainConfig cfg;
  auto near = [](double a, double b) { return std::abs(a - b) <= b * 1e-12; };
  c.expect(near(cfg.lr_at(8001), 4e-5), "lr(8001) = 4e-5");
  c.expect(near(cfg.lr_at(16001), 4e-6), "lr(16001) = 4e-6");
  c.expect(near(cfg.lr_at(24001), 4e-7), "lr(24001) = 4e-7");

  // checkpoint resume reproduces the straight-run metrics (all deterministic
  // columns; wall-clock seconds excluded by construction)
  synth::SynthConfig scfg;
  scfg.scenes = 6;
  scfg.val_scenes = 2;
  scfg.seed = 88;
  std::string dir = acc_dir("kprn_acc_sched");
  synth::generate_dataset(scfg, dir);
  train::DatasetBundle data = train::load_dataset_dir(dir);

  train::TrainConfig t;
  t.dims.embed_dim = 8;
  t.dims.lstm_hidden = 8;
  t.dims.att_hidden = 8;
  t.dims.decoder_hidden = 8;
  t.dims.rvis_dim = 8;
  t.iters = 8;
  t.eval_every = 2;
  t.checkpoint_every = 4;
  t.eval_slice = 8;
  t.seed = 3;

  std::string out = acc_dir("kprn_acc_sched_run");
  train::TrainResult straight = train::train_loop(data, t, out);

  train::TrainConfig half = t;
  half.iters = 4;
  std::string out_half = acc_dir("kprn_acc_sched_half");
  train::train_loop(data, half, out_half);
  diff::Checkpoint ck = diff::load_checkpoint(out_half + "/checkpoint.txt");
  train::TrainResult resumed = train::train_loop(data, t, "", &ck);

  bool params_match = true;
  for (const auto& [name, tensor] : straight.params)
    params_match = params_match && resumed.params.at(name).v == tensor.v;
  c.expect(params_match, "resumed parameters equal the straight run bit for bit");

  std::size_t off = straight.metrics.size() - resumed.metrics.size();
  bool rows_match = true;
  char lhs[256], rhs[256];
  for (std::size_t i = 0; i < resumed.metrics.size(); ++i) {
    const auto& a = resumed.metrics[i];
    const auto& b = straight.metrics[off + i];
    std::snprintf(lhs, sizeof(lhs), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(a.iteration), a.loss.sub, a.loss.obj, a.loss.lan,
                  a.loss.att, a.loss.total, a.eval_acc);
    std::snprintf(rhs, sizeof(rhs), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(b.iteration), b.loss.sub, b.loss.obj, b.loss.lan,
                  b.loss.att, b.loss.total, b.eval_acc);
    rows_match = rows_match && std::strcmp(lhs, rhs) == 0;
  }
  c.expect(rows_match, "resumed metrics log matches the straight run bit for bit");

  // dataset parser round trip: generator output -> load -> save is identical
  std::string train_file = dir + "/train.jsonl";
  auto scenes = scene::load_scenes(train_file);
  std::string resaved = out + "/roundtrip.jsonl";
  scene::save_scenes(resaved, scenes);
  auto bytes = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  c.expect(bytes(train_file) == bytes(resaved), "dataset file round-trips byte for byte");

  // embedding parser round trip on the shipped fixture
  std::string fixture = std::string(KPRN_DATA_DIR) + "/fixtures/embeddings_16d.txt";
  std::ifstream ef(fixture);
  c.expect(ef.good(), "shipped embedding fixture exists");
  std::ostringstream rebuilt;
  std::string line;
  wordvec::EmbeddingTable table = wordvec::load_embeddings_file(fixture);
  std::ifstream ef2(fixture);
  bool values_match = true;
  while (std::getline(ef2, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> parsed;
    double x;
    while (ls >> x) parsed.push_back(x);
    values_match = values_match && table.lookup(word) == parsed;
    rebuilt << word;
    char buf[40];
    for (double v : parsed) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      rebuilt << ' ' << buf;
    }
    rebuilt << '\n';
  }
  c.expect(values_match, "loaded embedding values equal the file values exactly");
  std::ifstream ef3(fixture, std::ios::binary);
  std::string original((std::istreambuf_iterator<char>(ef3)), std::istreambuf_iterator<char>());
  c.expect(rebuilt.str() == original, "embedding fixture reserializes byte for byte");
  return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

  struct Criterion {
    int id;
    const char* title;
    std::function<bool(Check&)> run;
  };
  std::vector<Criterion> criteria = {
      {1, "gradient suite (finite differences, < 60 s)", criterion_gradients},
      {2, "normalization and ordering invariants", criterion_normalization},
      {3, "oracle equivalence (scoring, ground, iou)", criterion_oracles},
      {4, "filter semantics (soft/hard/fallback)", criterion_filters},
      {5, "overfit sanity (50 steps, deterministic)", criterion_overfit},
      {6, "end-to-end synthetic learning", criterion_end_to_end},
      {7, "directional ablations (obj, hard vs soft)", criterion_ablations},
      {8, "schedule and IO exactness", criterion_schedule_io},
  };

  int failures = 0;
  for (const auto& cr : criteria) {
    if (only != 0 && cr.id != only) continue;
    Check c;
    bool ok = false;
    try {
      ok = cr.run(c);
    } catch (const std::exception& e) {
      c.log << "    exception: " << e.what() << "\n";
    }
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << cr.id << ": " << cr.title << "\n"
              << c.log.str();
    std::cout.flush();
    failures += ok ? 0 : 1;
  }
  return failures;
}
