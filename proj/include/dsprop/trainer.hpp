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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsprop/backbone.hpp"
#include "dsprop/checkpoint.hpp"
#include "dsprop/config.hpp"
#include "dsprop/dataset.hpp"
#include "dsprop/objective.hpp"

namespace dsprop {

// Pair steps run stage1_loss, single steps stage2_loss, joint steps the sum
// stage1(i, j) + stage2(i) + stage2(j) over one shared forward pass.
enum class StepKind { kPair, kSingle, kJoint };

struct Phase {
  std::string name;
  StepKind kind = StepKind::kPair;
  LossConfig loss;
  int epochs = 0;

  bool uses_cross() const { return kind != StepKind::kSingle && loss.cross_enabled(); }
  bool uses_self() const { return kind != StepKind::kPair && loss.self_enabled(); }
};

std::vector<Phase> build_schedule(const TrainConfig& config);

// Backbone settings of a run; the init seed is mixed with the run seed.
BackboneConfig run_backbone_config(const TrainConfig& config);

Tensor initial_cross_weights(const TrainConfig& config);
Tensor initial_self_weights(const TrainConfig& config, std::size_t phase);

// Backbone plus the reallocation weights of one run.
struct Model {
  TrainConfig config;
  Backbone backbone;
  std::optional<Parameter> w_c;
  std::optional<Parameter> w_s;

  explicit Model(TrainConfig cfg);
  std::vector<Parameter*> parameters();
};

Model model_from_checkpoint(const Checkpoint& ckpt);

struct EpochLog {
  std::size_t phase = 0;
  int epoch = 0;  // 1-based within the phase
  std::map<std::string, double> terms;  // per-step means
  double loss = 0.0;
};

struct StepRecord {
  std::size_t phase = 0;
  int epoch = 0;
  int step = 0;
  StepKind kind = StepKind::kPair;
  const CropSample* first = nullptr;
  const CropSample* second = nullptr;  // null for single steps
  const LossReport* report = nullptr;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& data);
  Trainer(TrainConfig config, const Dataset& data, std::vector<Phase> phases);

  // Continues from a checkpoint of the same config (hash checked).
  void restore(const Checkpoint& ckpt);

  // Runs one epoch of the current phase, entering the next phase when the
  // current one is exhausted. Returns false once the schedule is complete.
  bool run_epoch();
  void run();
  bool finished() const;

  Checkpoint checkpoint() const;

  Model& model() noexcept { return model_; }
  const Model& model() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return model_.config; }
  const std::vector<Phase>& phases() const noexcept { return phases_; }
  const std::vector<EpochLog>& history() const noexcept { return history_; }
  std::size_t phase() const noexcept { return phase_; }
  int epoch() const noexcept { return epoch_; }

  void on_step(std::function<void(const StepRecord&)> fn) { step_hook_ = std::move(fn); }
  void on_epoch(std::function<void(const EpochLog&)> fn) { epoch_hook_ = std::move(fn); }

 private:
  void enter_phase();
  LossReport step(const Phase& phase, std::mt19937_64& rng, int epoch, int index);
  std::vector<Parameter*> trainable(const Phase& phase);
  void clip_gradients(std::span<Parameter* const> params) const;

  Model model_;
  const Dataset* data_;
  std::vector<Phase> phases_;
  SgdMomentum optimizer_;
  std::size_t phase_ = 0;
  int epoch_ = 0;
  bool entered_ = false;
  std::vector<EpochLog> history_;
  std::function<void(const StepRecord&)> step_hook_;
  std::function<void(const EpochLog&)> epoch_hook_;
};

// Full ablation schedule of config.mode.
Checkpoint run_schedule(const TrainConfig& config, const Dataset& data);

// The first phase of a two-stage schedule.
Checkpoint train_stage1(const TrainConfig& config, const Dataset& data);
// The second phase, starting from a stage-1 checkpoint: backbone copied,
// W_c left frozen, W_s initialized fresh.
Checkpoint train_stage2(const TrainConfig& config, const Checkpoint& stage1, const Dataset& data);

}  // namespace dsprop
