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

#include "dsprop/csfr.hpp"

#include "dsprop/errors.hpp"

namespace dsprop {

CrossAffinity cross_affinity(Var features_i, Var features_j, Var w_c) {
  const auto k = w_c.value().rows();
  if (w_c.value().rank() != 2 || w_c.value().cols() != k)
    throw DimensionError("cross_affinity: W_c must be square, got " + shape_string(w_c.shape()));
  if (features_i.value().cols() != k || features_j.value().cols() != k)
    throw DimensionError("cross_affinity: feature widths " + shape_string(features_i.shape()) + ", " +
                         shape_string(features_j.shape()) + " do not match W_c " +
                         shape_string(w_c.shape()));
  CrossAffinity a;
  a.raw = matmul(matmul(features_i, w_c), transpose(features_j));
  a.row_norm = row_softmax(a.raw);
  a.col_norm = row_softmax(transpose(a.raw));
  return a;
}

Var reallocate(Var source, Var norm_affinity) {
  if (norm_affinity.value().cols() != source.value().rows())
    throw DimensionError("reallocate: affinity " + shape_string(norm_affinity.shape()) +
                         " does not index the rows of source " + shape_string(source.shape()));
  return matmul(norm_affinity, source);
}

FeatureMap reallocate_cross(const FeatureMap& source, Var norm_affinity,
                            const std::vector<Vec3>& target_positions, int level) {
  if (norm_affinity.value().rows() != target_positions.size())
    throw DimensionError("reallocate_cross: affinity rows do not match target points");
  return {target_positions, reallocate(source.features, norm_affinity), level};
}

Var cr_loss(Var logits_i, Var logits_j_cross, FrobeniusMode mode) {
  return agreement_loss(logits_i, logits_j_cross, mode);
}

Stage1Result stage1_loss(Tape& tape, Backbone& backbone, Parameter& w_c, const CropSample& i,
                         const CropSample& j, const LossConfig& config) {
  CropForward fi = forward_crop(tape, backbone, i);
  CropForward fj = forward_crop(tape, backbone, j);
  return stage1_loss(tape, backbone, w_c, std::move(fi), std::move(fj), config);
}

Stage1Result stage1_loss(Tape& tape, Backbone& backbone, Parameter& w_c, CropForward fi, CropForward fj,
                         const LossConfig& config) {
  Stage1Result r;
  std::vector<std::pair<double, Var>> terms;
  Var seg_i = masked_softmax_cross_entropy(fi.logits, fi.sample->one_hot, fi.sample->mask);
  Var seg_j = masked_softmax_cross_entropy(fj.logits, fj.sample->one_hot, fj.sample->mask);
  terms.emplace_back(config.seg_basic_weight, seg_i);
  terms.emplace_back(config.seg_basic_weight, seg_j);
  r.report.add("seg_basic", seg_i.value().item() + seg_j.value().item());

  if (config.cross_enabled()) {
    const auto& hi = fi.features.hook;
    const auto& hj = fj.features.hook;
    CrossAffinity a = cross_affinity(hi.features, hj.features, tape.param(w_c));
    // F^c_j lives on crop i's hook points and is built from crop j's features.
    FeatureMap fcj = reallocate_cross(hj, a.row_norm, hi.positions, hi.level);
    FeatureMap fci = reallocate_cross(hi, a.col_norm, hj.positions, hj.level);
    r.logits_j_cross = backbone.decode_from_hook(tape, fi.sample->geometry, fcj, fi.features.encoded);
    r.logits_i_cross = backbone.decode_from_hook(tape, fj.sample->geometry, fci, fj.features.encoded);
    if (config.cr && config.cr_weight > 0.0) {
      Var zi = config.stop_gradient_basic ? stop_gradient(fi.logits) : fi.logits;
      Var zj = config.stop_gradient_basic ? stop_gradient(fj.logits) : fj.logits;
      Var cr_ij = cr_loss(zi, r.logits_j_cross, config.frobenius);
      Var cr_ji = cr_loss(zj, r.logits_i_cross, config.frobenius);
      terms.emplace_back(config.cr_weight, cr_ij);
      terms.emplace_back(config.cr_weight, cr_ji);
      r.report.add("cr", cr_ij.value().item() + cr_ji.value().item());
    }
    if (config.seg_c && config.seg_c_weight > 0.0) {
      Var sc_i = masked_softmax_cross_entropy(r.logits_j_cross, fi.sample->one_hot, fi.sample->mask);
      Var sc_j = masked_softmax_cross_entropy(r.logits_i_cross, fj.sample->one_hot, fj.sample->mask);
      terms.emplace_back(config.seg_c_weight, sc_i);
      terms.emplace_back(config.seg_c_weight, sc_j);
      r.report.add("seg_c", sc_i.value().item() + sc_j.value().item());
    }
    r.affinity = a;
  }
  r.total = weighted_sum(tape, terms);
  r.report.total = r.total.value().item();
  r.i = std::move(fi);
  r.j = std::move(fj);
  return r;
}

}  // namespace dsprop
