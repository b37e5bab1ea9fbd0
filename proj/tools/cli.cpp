// Copyright 2026 The dsprop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dsprop/checkpoint.hpp"
#include "dsprop/cloud_io.hpp"
#include "dsprop/config.hpp"
#include "dsprop/csfr.hpp"
#include "dsprop/dataset.hpp"
#include "dsprop/errors.hpp"
#include "dsprop/evaluate.hpp"
#include "dsprop/isfr.hpp"
#include "dsprop/scene.hpp"
#include "dsprop/sweep.hpp"
#include "dsprop/trainer.hpp"

namespace dsprop {

namespace fs = std::filesystem;

namespace {

void setup_logging() {
  auto logger = spdlog::get("dsprop");
  if (!logger) logger = spdlog::stderr_color_mt("dsprop");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("DSPROP_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

std::string quote(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n' ? ' ' : c);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

struct GenArgs {
  std::string spec;
  std::string out;
  int scenes = 0;
  int test_scenes = -1;
  std::uint64_t seed = 1;
};

int gen_data(const GenArgs& a, std::ostream& out) {
  if (a.scenes < 1) throw ConfigError("--scenes must be >= 1");
  SceneSpec spec = a.spec.empty() ? SceneSpec::default_indoor() : read_scene_spec(a.spec);
  const int test = a.test_scenes >= 0 ? a.test_scenes : a.scenes / 5;
  if (test > a.scenes) throw ConfigError("--test-scenes exceeds --scenes");
  generate_dataset(spec, a.out, a.scenes, test, a.seed);
  out << "wrote " << a.scenes << " scenes (" << test << " test) to " << a.out << '\n';
  return 0;
}

DataOptions train_data_options(const TrainConfig& c) {
  return {c.input_ratio, c.weak_fraction, c.effective_label_seed(), true};
}

fs::path final_checkpoint_path(const TrainConfig& c, const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  if (c.checkpoint_dir.empty()) throw ConfigError("set [run] checkpoint_dir or pass --out");
  return c.checkpoint_dir / (c.name + ".ckpt");
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string out;
};

int train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = read_train_config(a.config);
  if (cfg.manifest.empty()) throw ConfigError("[data] manifest is required");
  const fs::path final_path = final_checkpoint_path(cfg, a.out);
  Manifest manifest = read_manifest(cfg.manifest);
  Dataset data = load_dataset(manifest, cfg.train_split, train_data_options(cfg));
  Trainer trainer(cfg, data);
  if (!a.resume.empty()) trainer.restore(load_checkpoint(a.resume));

  nlohmann::json history = nlohmann::json::array();
  int epochs_done = 0;
  trainer.on_epoch([&](const EpochLog& log) {
    history.push_back({{"phase", log.phase}, {"epoch", log.epoch}, {"loss", log.loss}, {"terms", log.terms}});
    ++epochs_done;
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epochs_done % cfg.checkpoint_every == 0) {
      fs::create_directories(cfg.checkpoint_dir);
      save_checkpoint(trainer.checkpoint(), cfg.checkpoint_dir / (cfg.name + "-last.ckpt"));
    }
  });
  trainer.run();

  if (final_path.has_parent_path()) fs::create_directories(final_path.parent_path());
  save_checkpoint(trainer.checkpoint(), final_path);
  fs::path history_path = final_path;
  history_path.replace_extension(".history.json");
  write_text(history_path, history.dump(2) + "\n");
  out << "trained " << to_string(cfg.mode) << " (" << epochs_done << " epochs); checkpoint " << final_path.string()
      << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string split = "test";
  std::string branch = "basic";
  std::string report;
  std::string manifest;
};

int eval(const EvalArgs& a, std::ostream& out) {
  const Branch branch = parse_branch(a.branch);
  Model model = model_from_checkpoint(load_checkpoint(a.ckpt));
  const auto& cfg = model.config;
  const fs::path manifest_path = a.manifest.empty() ? cfg.manifest : fs::path(a.manifest);
  if (manifest_path.empty()) throw ConfigError("checkpoint names no manifest; pass --manifest");
  Manifest manifest = read_manifest(manifest_path);
  Dataset data = load_dataset(manifest, a.split, {cfg.input_ratio, cfg.weak_fraction, 1, false});
  EvalReport report = evaluate(model, data, branch, {a.split, cfg.crop_radius, cfg.eval_seed});
  write_text(a.report, to_json(report).dump(2) + "\n");
  out << format_report(report);
  return 0;
}

struct AffinityArgs {
  std::string ckpt;
  std::string crop;
  std::string partner;
  std::size_t point = 0;
  std::string out;
};

std::uint32_t nearest_row(const std::vector<Vec3>& rows, const Vec3& p) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t r = 0; r < rows.size(); ++r) {
    const double d = squared_norm(rows[r] - p);
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

int export_affinity(const AffinityArgs& a, std::ostream& out) {
  Model model = model_from_checkpoint(load_checkpoint(a.ckpt));
  PointCloud crop = read_cloud(a.crop);
  if (a.point >= crop.size())
    throw IndexError("--point " + std::to_string(a.point) + " outside crop of " + std::to_string(crop.size()));
  const auto& bcfg = model.backbone.config();
  CropSample sample = prepare_crop(crop, bcfg, model.config.eval_seed);
  Tape tape;
  CropForward f = forward_crop(tape, model.backbone, sample);
  const auto& hook = f.features.hook;
  const std::uint32_t row = nearest_row(hook.positions, crop.positions[a.point]);

  // Affinity of the chosen point over the source cloud, spread to its points
  // through their nearest hook row.
  std::vector<double> values;
  PointCloud target = crop;
  if (a.partner.empty()) {
    if (!model.w_s) throw ConfigError("checkpoint has no W_s; pass --partner for a cross affinity");
    Tensor norm = self_affinity(hook.features, tape.param(*model.w_s)).norm.value();
    for (const auto& p : crop.positions) values.push_back(norm(row, nearest_row(hook.positions, p)));
  } else {
    if (!model.w_c) throw ConfigError("checkpoint has no W_c");
    target = read_cloud(a.partner);
    CropSample other = prepare_crop(target, bcfg, model.config.eval_seed);
    CropForward g = forward_crop(tape, model.backbone, other);
    const auto& ghook = g.features.hook;
    Tensor norm = cross_affinity(hook.features, ghook.features, tape.param(*model.w_c)).row_norm.value();
    for (const auto& p : target.positions) values.push_back(norm(row, nearest_row(ghook.positions, p)));
  }
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  export_affinity_ply(target.positions, values, a.out);
  out << "wrote affinity of point " << a.point << " (hook row " << row << ") to " << a.out << '\n';
  return 0;
}

struct SweepArgs {
  std::string config;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> modes;
  std::string split = "test";
  std::string report;
};

int sweep(const SweepArgs& a, std::ostream& out) {
  TrainConfig cfg = read_train_config(a.config);
  if (cfg.manifest.empty()) throw ConfigError("[data] manifest is required");
  SweepOptions opts;
  opts.seeds = a.seeds;
  opts.eval_split = a.split;
  if (!a.modes.empty()) {
    opts.modes.clear();
    for (const auto& m : a.modes) opts.modes.push_back(parse_train_mode(m));
  }
  SweepResult result = run_sweep(cfg, read_manifest(cfg.manifest), opts);
  write_text(a.report, to_json(result).dump(2) + "\n");
  out << format_sweep(result);
  return 0;
}

}  // namespace

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dsprop: weakly supervised point cloud segmentation with feature reallocation", "dsprop"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic labeled scene dataset");
  gen_cmd->add_option("--spec", gen.spec, "Scene spec INI (default: built-in indoor spec)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--test-scenes", gen.test_scenes, "Scenes assigned to the test split (default scenes/5)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train with the schedule of a config file");
  train_cmd->add_option("--config", tr.config, "Training config INI")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Final checkpoint path (default <checkpoint_dir>/<name>.ckpt)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ev.split, "Manifest split")->capture_default_str();
  eval_cmd->add_option("--branch", ev.branch, "Decoder branch")
      ->check(CLI::IsMember({"basic", "cross", "intra"}))
      ->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "JSON report path")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest (default: the one in the checkpoint config)")
      ->check(CLI::ExistingFile);

  AffinityArgs af;
  auto* aff_cmd = app.add_subcommand("export-affinity", "Write one point's affinity map as a colored PLY");
  aff_cmd->add_option("--ckpt", af.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  aff_cmd->add_option("--crop", af.crop, "Crop cloud (.dspc)")->required()->check(CLI::ExistingFile);
  aff_cmd->add_option("--point", af.point, "Point index within the crop")->required();
  aff_cmd->add_option("--out", af.out, "Output PLY")->required();
  aff_cmd->add_option("--partner", af.partner, "Second crop for a cross-sample affinity")->check(CLI::ExistingFile);

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate the full ablation grid");
  sweep_cmd->add_option("--config", sw.config, "Base training config INI")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--seeds", sw.seeds, "Seeds")->capture_default_str();
  sweep_cmd->add_option("--modes", sw.modes, "Subset of modes (default: all six)");
  sweep_cmd->add_option("--split", sw.split, "Evaluation split")->capture_default_str();
  sweep_cmd->add_option("--report", sw.report, "JSON report path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  setup_logging();
  try {
    if (gen_cmd->parsed()) return gen_data(gen, out);
    if (train_cmd->parsed()) return train(tr, out);
    if (eval_cmd->parsed()) return eval(ev, out);
    if (aff_cmd->parsed()) return export_affinity(af, out);
    if (sweep_cmd->parsed()) return sweep(sw, out);
  } catch (const Error& e) {
    err << "error: kind=" << e.kind() << " message=\"" << quote(e.what()) << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: kind=internal message=\"" << quote(e.what()) << "\"\n";
    return 1;
  }
  return 2;
}

}  // namespace dsprop
