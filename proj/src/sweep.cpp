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

#include "dsprop/sweep.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dsprop/errors.hpp"
#include "dsprop/trainer.hpp"

namespace dsprop {

std::vector<TrainMode> all_modes() {
  return {TrainMode::kBaseline, TrainMode::kCsfr,     TrainMode::kIsfr,
          TrainMode::kJoint,    TrainMode::kIsfrCsfr, TrainMode::kCsfrIsfr};
}

const SweepCell& SweepResult::cell(TrainMode mode) const {
  for (const auto& c : cells)
    if (c.mode == mode) return c;
  throw ConfigError("sweep has no results for mode " + to_string(mode));
}

SweepResult run_sweep(const TrainConfig& base, const Manifest& manifest, const SweepOptions& options) {
  if (options.modes.empty() || options.seeds.empty()) throw ConfigError("sweep needs at least one mode and seed");
  DataOptions eval_data{base.input_ratio, base.weak_fraction, 1, false};
  Dataset test = load_dataset(manifest, options.eval_split, eval_data);

  SweepResult result;
  result.split = options.eval_split;
  for (auto mode : options.modes) result.cells.push_back({mode, {}, 0.0, 0.0});

  for (auto seed : options.seeds) {
    TrainConfig seeded = base;
    seeded.seed = seed;
    DataOptions train_data{base.input_ratio, base.weak_fraction, seeded.effective_label_seed(), true};
    Dataset train = load_dataset(manifest, base.train_split, train_data);
    for (auto& cell : result.cells) {
      TrainConfig cfg = seeded;
      cfg.mode = cell.mode;
      const auto start = std::chrono::steady_clock::now();
      Trainer trainer(cfg, train);
      trainer.run();
      SweepRun run;
      run.mode = cell.mode;
      run.seed = seed;
      run.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      run.final_loss = trainer.history().empty() ? 0.0 : trainer.history().back().loss;
      EvalOptions eo{options.eval_split, cfg.crop_radius, cfg.eval_seed};
      run.report = evaluate(trainer.model(), test, Branch::kBasic, eo);
      run.miou = run.report.miou;
      spdlog::info("sweep {} seed {}: mIoU {:.4f} ({:.1f}s)", to_string(cell.mode), seed, run.miou,
                   run.train_seconds);
      if (options.on_run) options.on_run(run);
      cell.runs.push_back(std::move(run));
    }
  }

  for (auto& cell : result.cells) {
    double sum = 0.0;
    for (const auto& r : cell.runs) sum += r.miou;
    cell.mean = sum / static_cast<double>(cell.runs.size());
    double sq = 0.0;
    for (const auto& r : cell.runs) sq += (r.miou - cell.mean) * (r.miou - cell.mean);
    cell.stddev = cell.runs.size() > 1 ? std::sqrt(sq / static_cast<double>(cell.runs.size() - 1)) : 0.0;
  }
  return result;
}

nlohmann::json to_json(const SweepResult& result) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : result.cells) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : c.runs)
      runs.push_back({{"seed", r.seed},
                      {"miou", r.miou},
                      {"final_loss", r.final_loss},
                      {"train_seconds", r.train_seconds},
                      {"report", to_json(r.report)}});
    cells.push_back({{"mode", to_string(c.mode)}, {"mean_miou", c.mean}, {"std_miou", c.stddev}, {"runs", runs}});
  }
  return {{"split", result.split}, {"grid", cells}};
}

std::string format_sweep(const SweepResult& result) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %8s %8s  %s\n", "mode", "mIoU", "std", "per-seed");
  out << line;
  for (const auto& c : result.cells) {
    std::string seeds;
    for (const auto& r : c.runs) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "%s%llu:%.2f", seeds.empty() ? "" : " ",
                    static_cast<unsigned long long>(r.seed), 100.0 * r.miou);
      seeds += buf;
    }
    std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f  %s\n", to_string(c.mode).c_str(), 100.0 * c.mean,
                  100.0 * c.stddev, seeds.c_str());
    out << line;
  }
  return out.str();
}

}  // namespace dsprop
