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

#include "dsprop/objective.hpp"

#include <cmath>
#include <random>

namespace dsprop {

CropForward forward_crop(Tape& tape, Backbone& backbone, const CropSample& sample) {
  CropForward f;
  f.sample = &sample;
  Var input = tape.constant(sample.features);
  f.features = backbone.forward_to_hook(tape, sample.geometry, input);
  f.logits = backbone.decode_from_hook(tape, sample.geometry, f.features.hook, f.features.encoded);
  return f;
}

Var agreement_loss(Var a, Var b, FrobeniusMode mode) {
  return mode == FrobeniusMode::kMean ? frobenius_sq_mean(a, b) : frobenius_sq_sum(a, b);
}

Var weighted_sum(Tape& tape, const std::vector<std::pair<double, Var>>& terms) {
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  Var total = terms.front().first == 1.0 ? terms.front().second : scale(terms.front().second, terms.front().first);
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const auto& [w, v] = terms[k];
    total = add(total, w == 1.0 ? v : scale(v, w));
  }
  return total;
}

Tensor init_affinity_weights(std::size_t k, std::uint64_t seed) {
  Tensor w({k, k});
  const double s = 1.0 / std::sqrt(static_cast<double>(k));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-0.1 * s, 0.1 * s);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c) w(r, c) = (r == c ? s : 0.0) + noise(rng);
  return w;
}

}  // namespace dsprop
