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

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsprop/cloud_io.hpp"
#include "dsprop/config.hpp"
#include "dsprop/evaluate.hpp"

namespace dsprop {

// All six schedules: baseline, csfr, isfr, joint, isfr-csfr, csfr-isfr.
std::vector<TrainMode> all_modes();

struct SweepRun {
  TrainMode mode = TrainMode::kBaseline;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double final_loss = 0.0;
  double train_seconds = 0.0;
  EvalReport report;
};

struct SweepCell {
  TrainMode mode = TrainMode::kBaseline;
  std::vector<SweepRun> runs;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over seeds
};

struct SweepResult {
  std::string split;
  std::vector<SweepCell> cells;

  const SweepCell& cell(TrainMode mode) const;
};

struct SweepOptions {
  std::vector<TrainMode> modes = all_modes();
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string eval_split = "test";
  std::function<void(const SweepRun&)> on_run;
};

// Trains every (mode, seed) pair from one base config and evaluates the
// basic branch on the eval split. Weak labels follow each run's seed unless
// the base config pins label_seed.
SweepResult run_sweep(const TrainConfig& base, const Manifest& manifest, const SweepOptions& options);

nlohmann::json to_json(const SweepResult& result);
std::string format_sweep(const SweepResult& result);

}  // namespace dsprop
