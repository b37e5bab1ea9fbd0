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
#include <filesystem>
#include <string>
#include <string_view>

#include "dsprop/backbone.hpp"
#include "dsprop/objective.hpp"

namespace dsprop {

// Training schedules of the ablation grid.
enum class TrainMode { kBaseline, kCsfr, kIsfr, kCsfrIsfr, kIsfrCsfr, kJoint };

TrainMode parse_train_mode(const std::string& s);
std::string to_string(TrainMode mode);

struct TrainConfig {
  // [run]
  std::string name = "run";
  TrainMode mode = TrainMode::kCsfrIsfr;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints
  int checkpoint_every = 0;              // epochs; 0 writes only the final one

  // [data]
  std::filesystem::path manifest;
  std::string train_split = "train";
  double weak_fraction = 0.01;
  double input_ratio = 0.04;
  double crop_radius = 2.0;
  std::uint64_t label_seed = 0;  // 0: use seed

  // [schedule]
  int stage1_epochs = 600;
  int stage2_epochs = 600;
  int steps_per_epoch = 100;
  bool reset_velocity = true;

  // [optimizer]
  double learning_rate = 0.01;
  double momentum = 0.98;
  double grad_clip = 0.0;  // global-norm clip; 0 disables

  LossConfig loss;        // [loss]
  BackboneConfig model;   // [model]

  // [eval]
  std::uint64_t eval_seed = 7;

  std::uint64_t effective_label_seed() const { return label_seed == 0 ? seed : label_seed; }
  void validate() const;
};

// Flat INI; relative paths resolve against base_dir. Unknown keys are errors.
TrainConfig parse_train_config(std::string_view text, const std::filesystem::path& base_dir);
TrainConfig read_train_config(const std::filesystem::path& path);

// Complete INI text that parses back to the same config (paths absolute).
std::string format_train_config(const TrainConfig& config);

// FNV-1a over the canonical text, excluding the run name and paths.
std::uint64_t config_hash(const TrainConfig& config);

}  // namespace dsprop
