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

#include <optional>

#include "dsprop/objective.hpp"

namespace dsprop {

struct SelfAffinity {
  Var raw;   // F W_s F^T
  Var norm;  // row softmax of raw^T
};

SelfAffinity self_affinity(Var features, Var w_s);

// norm * F with no residual term.
Var reallocate_self(Var features, Var norm);

Var sr_loss(Var logits_self, Var logits, FrobeniusMode mode = FrobeniusMode::kMean);

struct Stage2Result {
  Var total;
  LossReport report;
  CropForward crop;
  Var logits_self{};
};

// L = seg_basic + seg_s + sr. `norm_override` replaces the learned affinity
// (used to check the no-residual contract with an identity matrix).
Stage2Result stage2_loss(Tape& tape, Backbone& backbone, Parameter& w_s, const CropSample& crop,
                         const LossConfig& config, const std::optional<Tensor>& norm_override = {});
Stage2Result stage2_loss(Tape& tape, Backbone& backbone, Parameter& w_s, CropForward crop,
                         const LossConfig& config, const std::optional<Tensor>& norm_override = {});

}  // namespace dsprop
