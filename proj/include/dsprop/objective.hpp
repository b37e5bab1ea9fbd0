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

#include <map>
#include <optional>
#include <string>

#include "dsprop/autograd.hpp"
#include "dsprop/backbone.hpp"

namespace dsprop {

enum class FrobeniusMode { kMean, kSum };

// Loss-term toggles and weights. A disabled term (or one with weight 0) is
// not built at all, so its module parameters are never bound.
struct LossConfig {
  double seg_basic_weight = 1.0;
  bool cr = true;
  double cr_weight = 1.0;
  bool seg_c = false;
  double seg_c_weight = 1.0;
  bool sr = true;
  double sr_weight = 1.0;
  bool seg_s = true;
  double seg_s_weight = 1.0;
  FrobeniusMode frobenius = FrobeniusMode::kMean;
  bool stop_gradient_basic = false;  // detach the basic branch inside CR/SR

  bool cross_enabled() const { return (cr && cr_weight > 0.0) || (seg_c && seg_c_weight > 0.0); }
  bool self_enabled() const { return (sr && sr_weight > 0.0) || (seg_s && seg_s_weight > 0.0); }
};

struct LossReport {
  std::map<std::string, double> terms;
  double total = 0.0;

  void add(const std::string& name, double value) { terms[name] += value; }
};

// Basic-branch forward pass of one crop.
struct CropForward {
  const CropSample* sample = nullptr;
  Backbone::Forward features;
  Var logits;
};

CropForward forward_crop(Tape& tape, Backbone& backbone, const CropSample& sample);

Var agreement_loss(Var a, Var b, FrobeniusMode mode);

// Sum of weighted terms; empty input yields a constant 0.
Var weighted_sum(Tape& tape, const std::vector<std::pair<double, Var>>& terms);

// Scaled identity plus uniform noise of half-width 0.1/sqrt(K).
Tensor init_affinity_weights(std::size_t k, std::uint64_t seed);

}  // namespace dsprop
