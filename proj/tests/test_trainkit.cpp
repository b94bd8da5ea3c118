#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "kprn/config.hpp"
#include "kprn/synthgen.hpp"
#include "kprn/trainkit.hpp"
#include "oracle_utils.hpp"

using namespace kprn;
using namespace kprn::train;

namespace {

std::string temp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p.string();
}

// small dataset shared by the tests in this file
const std::string& shared_dataset() {
  static std::string dir = [] {
    synth::SynthConfig cfg;
    cfg.scenes = 8;
    cfg.val_scenes = 3;
    cfg.proposals_per_scene = 6;
    cfg.seed = 99;
    std::string d = temp_dir("kprn_trainkit_ds");
    synth::generate_dataset(cfg, d);
    return d;
  }();
  return dir;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.dims.embed_dim = 6;
  cfg.dims.lstm_hidden = 6;
  cfg.dims.att_hidden = 8;
  cfg.dims.decoder_hidden = 8;
  cfg.dims.rvis_dim = 8;
  cfg.iters = 6;
  cfg.eval_every = 2;
  cfg.checkpoint_every = 3;
  cfg.eval_slice = 12;
  cfg.seed = 5;
  return cfg;
}

bool params_equal(const diff::ParamStore& a, const diff::ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    if (!b.contains(name)) return false;
    if (b.at(name).v != t.v) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("learning rate schedule is exact") {
  TrainConfig cfg;  // defaults: lr 4e-4, x0.1 every 8000
  CHECK(cfg.lr_at(1) == 4e-4);
  CHECK(cfg.lr_at(7999) == 4e-4);
  CHECK(cfg.lr_at(8000) == Catch::Approx(4e-5).epsilon(1e-12));
  CHECK(cfg.lr_at(8001) == Catch::Approx(4e-5).epsilon(1e-12));
  CHECK(cfg.lr_at(16001) == Catch::Approx(4e-6).epsilon(1e-12));
  CHECK(cfg.lr_at(24001) == Catch::Approx(4e-7).epsilon(1e-12));
}

TEST_CASE("train_step with zero learning rate leaves parameters unchanged") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig cfg = tiny_train_config();
  diff::ParamStore ps = init_model(data, cfg);
  diff::ParamStore before = ps;
  diff::AdamState adam;
  adam.hyper.lr = 0.0;
  train_step(data.train[0], ps, adam, data, cfg);
  CHECK(params_equal(ps, before));
}

TEST_CASE("fixed seed gives identical metrics across runs") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig cfg = tiny_train_config();
  TrainResult a = train_loop(data, cfg);
  TrainResult b = train_loop(data, cfg);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].loss.total == b.metrics[i].loss.total);
    CHECK(a.metrics[i].loss.lan == b.metrics[i].loss.lan);
    CHECK(a.metrics[i].eval_acc == b.metrics[i].eval_acc);
  }
  CHECK(params_equal(a.params, b.params));
}

TEST_CASE("zero iterations produce the initialization checkpoint") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig cfg = tiny_train_config();
  cfg.iters = 0;
  std::string out = temp_dir("kprn_train0");
  TrainResult res = train_loop(data, cfg, out);
  diff::Checkpoint ck = diff::load_checkpoint(out + "/checkpoint.txt");
  CHECK(ck.iteration == 0);
  CHECK(params_equal(ck.params, init_model(data, cfg)));
}

TEST_CASE("resuming from a checkpoint reproduces the straight run") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig cfg = tiny_train_config();
  cfg.iters = 6;
  cfg.checkpoint_every = 3;
  std::string out_a = temp_dir("kprn_straight");
  TrainResult straight = train_loop(data, cfg, out_a);

  TrainConfig half = cfg;
  half.iters = 3;
  std::string out_b = temp_dir("kprn_half");
  train_loop(data, half, out_b);
  diff::Checkpoint ck = diff::load_checkpoint(out_b + "/checkpoint.txt");
  REQUIRE(ck.iteration == 3);

  TrainResult resumed = train_loop(data, cfg, "", &ck);
  CHECK(params_equal(resumed.params, straight.params));
  CHECK(resumed.adam.step == straight.adam.step);

  // the resumed metrics cover iterations 4..6 and must match bit for bit
  // (wall-clock seconds excluded)
  REQUIRE(straight.metrics.size() >= resumed.metrics.size());
  std::size_t off = straight.metrics.size() - resumed.metrics.size();
  for (std::size_t i = 0; i < resumed.metrics.size(); ++i) {
    CHECK(resumed.metrics[i].iteration == straight.metrics[off + i].iteration);
    CHECK(resumed.metrics[i].loss.total == straight.metrics[off + i].loss.total);
    CHECK(resumed.metrics[i].eval_acc == straight.metrics[off + i].eval_acc);
  }
}

TEST_CASE("evaluate: exact and disjoint predictions") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig cfg = tiny_train_config();
  diff::ParamStore ps = init_model(data, cfg);

  scene::SceneRecord sc;
  sc.image_id = "x";
  sc.width = sc.height = 100;
  scene::ProposalRecord p;
  p.id = 0;
  p.box = {10, 10, 30, 30};
  p.category = "square";
  p.feat_c3.assign(static_cast<std::size_t>(data.feat.c3), 0.1);
  p.feat_c4.assign(static_cast<std::size_t>(data.feat.c4), 0.2);
  sc.proposals = {p};
  querylang::QueryRecord q;
  q.tokens = {"red", "square"};
  q.parsed.category = "square";
  sc.queries = {q};

  SECTION("prediction equal to the ground truth scores 1.0") {
    sc.gt_boxes = {scene::BBox{10, 10, 30, 30}};
    EvalResult r = evaluate({sc}, ps, data, cfg);
    CHECK(r.accuracy == 1.0);
    CHECK(r.evaluated == 1);
  }
  SECTION("disjoint prediction scores 0.0") {
    sc.gt_boxes = {scene::BBox{60, 60, 90, 90}};
    EvalResult r = evaluate({sc}, ps, data, cfg);
    CHECK(r.accuracy == 0.0);
  }
  SECTION("missing ground truth is skipped and counted") {
    sc.queries.push_back(q);
    sc.gt_boxes = {scene::BBox{10, 10, 30, 30}, std::nullopt};
    EvalResult r = evaluate({sc}, ps, data, cfg);
    CHECK(r.evaluated == 1);
    CHECK(r.skipped == 1);
    CHECK(r.accuracy == 1.0);
  }
  SECTION("a split with no usable ground truth is an error") {
    sc.gt_boxes = {std::nullopt};
    CHECK_THROWS_AS(evaluate({sc}, ps, data, cfg), DataError);
  }
}

TEST_CASE("random-choice baseline sits at one over the proposal count") {
  synth::SynthConfig scfg;
  scfg.scenes = 90;  // ~540 queries
  scfg.val_scenes = 0;
  scfg.proposals_per_scene = 8;
  scfg.seed = 1234;
  std::string dir = temp_dir("kprn_baseline_ds");
  synth::generate_dataset(scfg, dir);
  auto scenes = scene::load_scenes(dir + "/train.jsonl");

  Rng rng(555);
  std::int64_t correct = 0, total = 0;
  for (const auto& sc : scenes)
    for (std::size_t qi = 0; qi < sc.queries.size(); ++qi) {
      const auto& pick = sc.proposals[static_cast<std::size_t>(
          rng.below(static_cast<std::int64_t>(sc.proposals.size())))];
      total += 1;
      correct += scene::iou(pick.box, *sc.gt_boxes[qi]) > 0.5 ? 1 : 0;
    }
  REQUIRE(total >= 500);
  double acc = static_cast<double>(correct) / static_cast<double>(total);
  double p = 1.0 / 8.0;
  double ci = 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(total));
  CHECK(std::abs(acc - p) <= ci);
}

TEST_CASE("ablation: a single-cell grid equals one train+evaluate run") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig cfg = tiny_train_config();
  std::vector<AblationRow> rows = run_ablation(data, {cfg});
  REQUIRE(rows.size() == 1);
  CHECK_FALSE(rows[0].failed);
  CHECK(rows[0].label == "attr+loc+obj+soft+dist");

  TrainResult tr = train_loop(data, cfg);
  double direct = evaluate(data.val, tr.params, data, cfg).accuracy;
  CHECK(rows[0].accuracy == direct);
}

TEST_CASE("ablation: threshold sweep emits one labelled row per threshold") {
  DatasetBundle data = load_dataset_dir(shared_dataset());
  TrainConfig base = tiny_train_config();
  base.iters = 2;
  base.eval_every = 0;
  std::vector<TrainConfig> cells;
  for (double thr : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) {
    TrainConfig c = base;
    c.fwd.soft_mode = false;
    c.fwd.hard_threshold = thr;
    cells.push_back(c);
  }
  auto rows = run_ablation(data, cells);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].label == "attr+loc+obj+hard(0.10)+dist");
  CHECK(rows[5].label == "attr+loc+obj+hard(0.60)+dist");
  for (const auto& r : rows) CHECK_FALSE(r.failed);
}

TEST_CASE("metrics CSV columns match the documented header") {
  std::vector<MetricsRow> rows(2);
  rows[0].iteration = 10;
  rows[0].loss = {0.1, 0.2, 0.3, 0.4, 1.0};
  rows[0].eval_acc = 0.5;
  rows[0].seconds = 1.25;
  rows[1].iteration = 20;
  std::string path = temp_dir("kprn_metrics") + "/metrics.csv";
  write_metrics_csv(path, rows);
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "iteration,loss_sub,loss_obj,loss_lan,loss_att,total,eval_acc,seconds");
  std::string row;
  std::getline(f, row);
  CHECK(row.substr(0, 3) == "10,");
  int lines = 1;
  while (std::getline(f, row)) ++lines;
  CHECK(lines == 2);
}

TEST_CASE("config keys apply and unknown keys are rejected with the key list") {
  TrainConfig cfg;
  config::apply_train_key(cfg, "mode", "hard");
  config::apply_train_key(cfg, "hard_threshold", "0.25");
  config::apply_train_key(cfg, "obj", "0");
  config::apply_train_key(cfg, "iters", "123");
  CHECK_FALSE(cfg.fwd.soft_mode);
  CHECK(cfg.fwd.hard_threshold == 0.25);
  CHECK_FALSE(cfg.fwd.use_obj);
  CHECK(cfg.iters == 123);
  try {
    config::apply_train_key(cfg, "warp_speed", "9");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lr_decay_every") != std::string::npos);
  }
  CHECK_THROWS_AS(config::apply_train_key(cfg, "lr", "-1"), ConfigError);
  CHECK_THROWS_AS(config::apply_train_key(cfg, "iters", "many"), ConfigError);
}

TEST_CASE("config files tolerate spaces and comments") {
  std::string path = temp_dir("kprn_cfg") + "/t.cfg";
  {
    std::ofstream f(path);
    f << "# comment line\n";
    f << "mode = hard   # trailing comment\n";
    f << "  iters=77\n";
    f << "hard_threshold =0.3\n";
  }
  auto pairs = config::parse_kv_file(path);
  TrainConfig cfg = config::train_config_from(pairs);
  CHECK_FALSE(cfg.fwd.soft_mode);
  CHECK(cfg.iters == 77);
  CHECK(cfg.fwd.hard_threshold == 0.3);
}
