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
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsprop/dataset.hpp"
#include "dsprop/trainer.hpp"

namespace dsprop {

// Decoder branch used for predictions. Only kBasic is an inference path;
// kCross and kIntra decode reallocated hook features for diagnostics.
enum class Branch { kBasic, kCross, kIntra };

Branch parse_branch(const std::string& s);
std::string to_string(Branch branch);

// counts[truth][prediction].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int32_t num_classes);

  void add(std::span<const std::int32_t> truth, std::span<const std::int32_t> prediction);
  std::uint64_t at(std::int32_t truth, std::int32_t prediction) const;
  std::int32_t num_classes() const noexcept { return classes_; }
  std::uint64_t total() const;

  std::uint64_t truth_count(std::int32_t c) const;
  std::uint64_t predicted_count(std::int32_t c) const;
  // TP / (TP + FP + FN); 0 when the class is absent from both.
  double iou(std::int32_t c) const;
  // Unweighted mean over classes present in the ground truth.
  double miou() const;

 private:
  std::int32_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct EvalOptions {
  std::string split = "test";
  double crop_radius = 2.0;
  std::uint64_t partner_seed = 7;  // cross branch: fixed partner draw
};

struct EvalReport {
  std::string split;
  Branch branch = Branch::kBasic;
  std::vector<std::string> class_names;
  std::vector<double> iou;
  std::vector<bool> present;
  std::vector<std::uint64_t> truth_counts;
  std::vector<std::uint64_t> predicted_counts;
  double miou = 0.0;
  std::uint64_t points = 0;
  std::uint64_t crops = 0;
  double runtime_seconds = 0.0;
  std::uint64_t module_accesses = 0;  // binds of W_c and W_s during evaluation
};

EvalReport make_report(const ConfusionMatrix& confusion);

// Per-crop softmax votes summed on the input points, argmax, back-projected
// to the original clouds. Throws ConfigError when the branch needs a module
// the model does not have.
EvalReport evaluate(Model& model, const Dataset& data, Branch branch, const EvalOptions& options = {});

nlohmann::json to_json(const EvalReport& report);
std::string format_report(const EvalReport& report);

}  // namespace dsprop
