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

#include "dsprop/objective.hpp"

namespace dsprop {

struct CrossAffinity {
  Var raw;       // F_i W_c F_j^T, [N_i x N_j]
  Var row_norm;  // row softmax of raw; rows weight crop j's points
  Var col_norm;  // row softmax of raw^T; rows weight crop i's points
};

CrossAffinity cross_affinity(Var features_i, Var features_j, Var w_c);

// Left multiplication norm * source: every target row becomes a convex
// combination of source rows.
Var reallocate(Var source, Var norm_affinity);
FeatureMap reallocate_cross(const FeatureMap& source, Var norm_affinity,
                            const std::vector<Vec3>& target_positions, int level);

// Agreement between the basic logits of crop i and the logits decoded from
// crop j's reallocated features (both live on crop i's points).
Var cr_loss(Var logits_i, Var logits_j_cross, FrobeniusMode mode = FrobeniusMode::kMean);

struct Stage1Result {
  Var total;
  LossReport report;
  CropForward i, j;
  std::optional<CrossAffinity> affinity;
  Var logits_j_cross{}, logits_i_cross{};  // decoded on crop i / crop j
};

// L = seg(i) + seg(j) + cr(Z_i, Z^c_j) + cr(Z_j, Z^c_i) [+ seg_c terms].
Stage1Result stage1_loss(Tape& tape, Backbone& backbone, Parameter& w_c, const CropSample& i,
                         const CropSample& j, const LossConfig& config);
Stage1Result stage1_loss(Tape& tape, Backbone& backbone, Parameter& w_c, CropForward i, CropForward j,
                         const LossConfig& config);

}  // namespace dsprop
