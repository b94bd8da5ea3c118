#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kprn/config.hpp"
#include "kprn/synthgen.hpp"
#include "kprn/trainkit.hpp"

namespace kprn::cli {

// Exit codes: 0 ok, 2 usage/config error, 3 data error, 4 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

namespace clidetail {

inline train::TrainConfig make_train_config(const std::string& config_path,
                                            const std::vector<std::string>& overrides) {
  train::TrainConfig cfg;
  if (!config_path.empty())
    for (const auto& [k, v] : config::parse_kv_file(config_path)) config::apply_train_key(cfg, k, v);
  for (const auto& kv : overrides) {
    auto [k, v] = config::parse_override(kv);
    config::apply_train_key(cfg, k, v);
  }
  return cfg;
}

inline synth::SynthConfig make_synth_config(const std::string& config_path,
                                            const std::vector<std::string>& overrides) {
  synth::SynthConfig cfg;
  if (!config_path.empty())
    for (const auto& [k, v] : config::parse_kv_file(config_path)) config::apply_synth_key(cfg, k, v);
  for (const auto& kv : overrides) {
    auto [k, v] = config::parse_override(kv);
    config::apply_synth_key(cfg, k, v);
  }
  return cfg;
}

// Shape-checks a loaded checkpoint against the model the config would build.
inline void check_checkpoint_dims(const diff::Checkpoint& ck, const train::DatasetBundle& data,
                                  const train::TrainConfig& cfg) {
  diff::ParamStore expected = train::init_model(data, cfg);
  for (const auto& [name, t] : expected) {
    KPRN_DATA_REQUIRE(ck.params.contains(name), "checkpoint is missing parameter '", name,
                      "' (config/dataset mismatch?)");
    KPRN_DATA_REQUIRE(ck.params.at(name).same_shape(t), "checkpoint parameter '", name,
                      "' has mismatched shape for this config/dataset");
  }
}

inline nlohmann::json box_json(const scene::BBox& b) {
  return nlohmann::json::array({b.x_tl, b.y_tl, b.x_br, b.y_br});
}

inline void write_eval_report(const std::string& path, const train::EvalResult& res) {
  std::ofstream f(path, std::ios::binary);
  KPRN_DATA_REQUIRE(f.good(), "cannot write eval report: ", path);
  for (const auto& row : res.rows) {
    nlohmann::json j;
    j["image_id"] = row.image_id;
    j["query"] = row.query;
    if (row.skipped) {
      j["skipped"] = true;
    } else {
      j["predicted_box"] = box_json(row.predicted);
      j["object_box"] = row.object_box ? box_json(*row.object_box) : nlohmann::json();
      j["gt_box"] = row.gt ? box_json(*row.gt) : nlohmann::json();
      j["iou"] = row.iou;
      j["correct"] = row.correct;
    }
    f << j.dump() << '\n';
  }
}

inline void write_ablation_outputs(const std::string& out_dir,
                                   const std::vector<train::AblationRow>& rows,
                                   std::ostream& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream csv((fs::path(out_dir) / "ablation.csv").string(), std::ios::binary);
  KPRN_DATA_REQUIRE(csv.good(), "cannot write ablation.csv");
  csv << "label,accuracy,status\n";
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream txt;
  for (const auto& r : rows) {
    char acc[32];
    std::snprintf(acc, sizeof(acc), "%.4f", r.accuracy);
    csv << r.label << ',' << (r.failed ? "" : acc) << ',' << (r.failed ? "FAILED" : "ok") << '\n';
    txt << r.label << std::string(width - r.label.size() + 2, ' ')
        << (r.failed ? "FAILED  " + r.error : acc) << '\n';
  }
  std::ofstream table((fs::path(out_dir) / "ablation.txt").string(), std::ios::binary);
  table << txt.str();
  out << txt.str();
}

}  // namespace clidetail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"kprn - knowledge-guided pairwise grounding engine"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir = ".", checkpoint_path, grid_path, split = "val";
  std::string resume_path, inspect_data;
  std::vector<std::string> overrides;
  long long iters_override = -1;

  auto add_common = [&](CLI::App* cmd, bool with_config = true) {
    if (with_config) cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "config override key=value (repeatable)");
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen);

  CLI::App* trn = app.add_subcommand("train", "train a model");
  add_common(trn);
  trn->add_option("--data", data_dir, "dataset directory")->required();
  trn->add_option("--iters", iters_override, "iteration-count override");
  trn->add_option("--resume", resume_path, "checkpoint to resume from");

  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(evl);
  evl->add_option("--data", data_dir, "dataset directory")->required();
  evl->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  evl->add_option("--split", split, "val or train split");

  CLI::App* abl = app.add_subcommand("ablate", "run an ablation grid");
  add_common(abl);
  abl->add_option("--data", data_dir, "dataset directory")->required();
  abl->add_option("--grid", grid_path, "grid file, one cell per line")->required();

  CLI::App* ins = app.add_subcommand("inspect", "summarize a checkpoint or dataset file");
  ins->add_option("--checkpoint", checkpoint_path, "checkpoint file");
  ins->add_option("--data", inspect_data, "dataset JSONL file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  namespace fs = std::filesystem;
  try {
    if (gen->parsed()) {
      synth::SynthConfig cfg = clidetail::make_synth_config(config_path, overrides);
      synth::GenSummary s = synth::generate_dataset(cfg, out_dir);
      out << "wrote " << s.train_scenes << " train scenes (" << s.train_queries << " queries), "
          << s.val_scenes << " val scenes (" << s.val_queries << " queries), "
          << s.vocabulary_words << " fixture words to " << out_dir << "\n";
    } else if (trn->parsed()) {
      train::TrainConfig cfg = clidetail::make_train_config(config_path, overrides);
      if (iters_override >= 0) cfg.iters = static_cast<int>(iters_override);
      train::DatasetBundle data = train::load_dataset_dir(data_dir);
      diff::Checkpoint resume;
      const diff::Checkpoint* resume_ptr = nullptr;
      if (!resume_path.empty()) {
        resume = diff::load_checkpoint(resume_path);
        clidetail::check_checkpoint_dims(resume, data, cfg);
        resume_ptr = &resume;
      }
      train::TrainResult res = train::train_loop(data, cfg, out_dir, resume_ptr);
      out << "trained " << res.iterations << " iterations; checkpoint + metrics in " << out_dir
          << "\n";
      if (!res.metrics.empty()) {
        const auto& last = res.metrics.back();
        out << "final: total loss " << last.loss.total << ", small-eval accuracy "
            << last.eval_acc << "\n";
      }
    } else if (evl->parsed()) {
      train::TrainConfig cfg = clidetail::make_train_config(config_path, overrides);
      train::DatasetBundle data = train::load_dataset_dir(data_dir);
      diff::Checkpoint ck = diff::load_checkpoint(checkpoint_path);
      clidetail::check_checkpoint_dims(ck, data, cfg);
      if (split != "val" && split != "train")
        throw ConfigError("--split must be val or train, got '" + split + "'");
      const auto& scenes = split == "val" ? data.val : data.train;
      train::EvalResult res = train::evaluate(scenes, ck.params, data, cfg);
      fs::create_directories(out_dir);
      std::string report = (fs::path(out_dir) / "eval_report.jsonl").string();
      clidetail::write_eval_report(report, res);
      out << "accuracy " << res.accuracy << " (" << res.correct << "/" << res.evaluated
          << " correct, " << res.skipped << " skipped); report: " << report << "\n";
    } else if (abl->parsed()) {
      train::TrainConfig base = clidetail::make_train_config(config_path, overrides);
      train::DatasetBundle data = train::load_dataset_dir(data_dir);
      std::vector<train::TrainConfig> cells = config::parse_grid_file(grid_path, base);
      KPRN_DATA_REQUIRE(!cells.empty(), "grid file has no cells: ", grid_path);
      std::vector<train::AblationRow> rows = train::run_ablation(data, cells);
      clidetail::write_ablation_outputs(out_dir, rows, out);
    } else if (ins->parsed()) {
      if (!checkpoint_path.empty()) {
        diff::Checkpoint ck = diff::load_checkpoint(checkpoint_path);
        out << "checkpoint at iteration " << ck.iteration << ", adam step " << ck.adam.step
            << ", " << ck.params.size() << " parameters\n";
        for (const auto& [name, t] : ck.params) {
          double norm = 0.0;
          for (double x : t.v) norm += x * x;
          out << "  " << name << " [";
          for (std::size_t i = 0; i < t.shape.size(); ++i)
            out << (i ? "x" : "") << t.shape[i];
          if (t.shape.empty()) out << "scalar";
          out << "] l2=" << std::sqrt(norm) << "\n";
        }
      } else if (!inspect_data.empty()) {
        auto scenes = scene::load_scenes(inspect_data);
        std::size_t queries = 0, proposals = 0, with_gt = 0;
        for (const auto& sc : scenes) {
          queries += sc.queries.size();
          proposals += sc.proposals.size();
          for (const auto& g : sc.gt_boxes) with_gt += g.has_value() ? 1 : 0;
        }
        out << scenes.size() << " scenes, " << queries << " queries (" << with_gt
            << " with ground truth), " << proposals << " proposals\n";
      } else {
        throw ConfigError("inspect needs --checkpoint or --data");
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ContractViolation& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace kprn::cli
