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

#include "dsprop/isfr.hpp"

#include "dsprop/csfr.hpp"
#include "dsprop/errors.hpp"

namespace dsprop {

SelfAffinity self_affinity(Var features, Var w_s) {
  const auto k = w_s.value().rows();
  if (w_s.value().rank() != 2 || w_s.value().cols() != k)
    throw DimensionError("self_affinity: W_s must be square, got " + shape_string(w_s.shape()));
  if (features.value().cols() != k)
    throw DimensionError("self_affinity: feature width " + shape_string(features.shape()) +
                         " does not match W_s " + shape_string(w_s.shape()));
  SelfAffinity a;
  a.raw = matmul(matmul(features, w_s), transpose(features));
  a.norm = row_softmax(transpose(a.raw));
  return a;
}

Var reallocate_self(Var features, Var norm) {
  if (norm.value().rows() != features.value().rows())
    throw DimensionError("reallocate_self: affinity " + shape_string(norm.shape()) + " vs features " +
                         shape_string(features.shape()));
  return reallocate(features, norm);
}

Var sr_loss(Var logits_self, Var logits, FrobeniusMode mode) {
  return agreement_loss(logits_self, logits, mode);
}

Stage2Result stage2_loss(Tape& tape, Backbone& backbone, Parameter& w_s, const CropSample& crop,
                         const LossConfig& config, const std::optional<Tensor>& norm_override) {
  return stage2_loss(tape, backbone, w_s, forward_crop(tape, backbone, crop), config, norm_override);
}

Stage2Result stage2_loss(Tape& tape, Backbone& backbone, Parameter& w_s, CropForward f,
                         const LossConfig& config, const std::optional<Tensor>& norm_override) {
  Stage2Result r;
  std::vector<std::pair<double, Var>> terms;
  Var seg = masked_softmax_cross_entropy(f.logits, f.sample->one_hot, f.sample->mask);
  terms.emplace_back(config.seg_basic_weight, seg);
  r.report.add("seg_basic", seg.value().item());

  if (config.self_enabled()) {
    const auto& hook = f.features.hook;
    Var norm = norm_override ? tape.constant(*norm_override)
                             : self_affinity(hook.features, tape.param(w_s)).norm;
    FeatureMap fs{hook.positions, reallocate_self(hook.features, norm), hook.level};
    r.logits_self = backbone.decode_from_hook(tape, f.sample->geometry, fs, f.features.encoded);
    if (config.sr && config.sr_weight > 0.0) {
      Var z = config.stop_gradient_basic ? stop_gradient(f.logits) : f.logits;
      Var sr = sr_loss(r.logits_self, z, config.frobenius);
      terms.emplace_back(config.sr_weight, sr);
      r.report.add("sr", sr.value().item());
    }
    if (config.seg_s && config.seg_s_weight > 0.0) {
      Var ss = masked_softmax_cross_entropy(r.logits_self, f.sample->one_hot, f.sample->mask);
      terms.emplace_back(config.seg_s_weight, ss);
      r.report.add("seg_s", ss.value().item());
    }
  }
  r.total = weighted_sum(tape, terms);
  r.report.total = r.total.value().item();
  r.crop = std::move(f);
  return r;
}

}  // namespace dsprop
