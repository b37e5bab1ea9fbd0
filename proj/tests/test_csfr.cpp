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

#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dsprop/csfr.hpp"
#include "dsprop/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dsprop;
using namespace dsprop::testing;

namespace {

void check_row_stochastic(const Tensor& a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double v : a.row(r)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

Tensor permute_rows(const Tensor& a, const std::vector<std::size_t>& perm) {
  Tensor out = a;
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(perm[r], c);
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

PointCloud single_point(Vec3 p, Vec3 color, std::int32_t label, int classes) {
  PointCloud c;
  c.positions = {p};
  c.colors = {color};
  c.labels = {label};
  c.weak_mask = {1};
  c.scene_id = "one";
  c.num_classes = classes;
  return c;
}

}  // namespace

TEST_CASE("cross_affinity") {
  Tape t;
  SUBCASE("scalar case") {
    auto a = cross_affinity(t.constant(Tensor::matrix({{2}})), t.constant(Tensor::matrix({{3}})),
                            t.constant(Tensor::matrix({{1}})));
    CHECK(a.raw.value() == Tensor::matrix({{6}}));
    CHECK(a.row_norm.value() == Tensor::matrix({{1}}));
    CHECK(a.col_norm.value() == Tensor::matrix({{1}}));
  }
  SUBCASE("zero weights give uniform rows") {
    std::mt19937_64 rng(1);
    auto a = cross_affinity(t.constant(random_tensor({4, 3}, rng)), t.constant(random_tensor({5, 3}, rng)),
                            t.constant(Tensor({3, 3})));
    for (double v : a.row_norm.value().data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
    for (double v : a.col_norm.value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("raw equals the triple-loop oracle") {
    std::mt19937_64 rng(2);
    Tensor fi = random_tensor({3, 4}, rng), fj = random_tensor({2, 4}, rng), w = random_tensor({4, 4}, rng);
    auto a = cross_affinity(t.constant(fi), t.constant(fj), t.constant(w));
    CHECK(max_abs_diff(a.raw.value(), bilinear_affinity_oracle(fi, w, fj)) < 1e-12);
    CHECK(max_abs_diff(a.row_norm.value(), softmax_rows_oracle(bilinear_affinity_oracle(fi, w, fj))) < 1e-12);
    CHECK(max_abs_diff(a.col_norm.value(),
                       softmax_rows_oracle(transpose_oracle(bilinear_affinity_oracle(fi, w, fj)))) < 1e-12);
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(cross_affinity(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 4})), t.constant(Tensor({3, 3}))),
                    DimensionError);
    CHECK_THROWS_AS(cross_affinity(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3})), t.constant(Tensor({3, 2}))),
                    DimensionError);
  }
  SUBCASE("normalized affinities are row-stochastic") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t ni = 1 + rng() % 12, nj = 1 + rng() % 12, k = 1 + rng() % 6;
      auto a = cross_affinity(t.constant(random_tensor({ni, k}, rng, -3, 3)),
                              t.constant(random_tensor({nj, k}, rng, -3, 3)),
                              t.constant(random_tensor({k, k}, rng, -3, 3)));
      CHECK(a.row_norm.value().rows() == ni);
      CHECK(a.col_norm.value().rows() == nj);
      check_row_stochastic(a.row_norm.value());
      check_row_stochastic(a.col_norm.value());
    }
  }
}

TEST_CASE("reallocate_cross") {
  Tape t;
  std::mt19937_64 rng(4);
  Tensor src = random_tensor({4, 3}, rng);
  std::vector<Vec3> target{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  FeatureMap source{{{9, 9, 9}, {8, 8, 8}, {7, 7, 7}, {6, 6, 6}}, t.constant(src), 1};

  auto same = reallocate_cross(source, t.constant(Tensor::identity(4)), target, 1);
  CHECK(same.features.value() == src);
  CHECK(same.positions == target);

  auto avg = reallocate_cross(source, t.constant(Tensor({2, 4}, 0.25)), {target[0], target[1]}, 1);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const double mean = (src(0, c) + src(1, c) + src(2, c) + src(3, c)) / 4.0;
      CHECK(avg.features.value()(r, c) == doctest::Approx(mean).epsilon(1e-14));
    }

  SUBCASE("permuting source rows with affinity columns") {
    Tensor aff = softmax_rows_oracle(random_tensor({5, 4}, rng, -2, 2));
    auto perm = shuffled(4, 7);
    Tensor aff_p({5, 4});
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 4; ++c) aff_p(r, c) = aff(r, perm[c]);
    auto a = reallocate(t.constant(src), t.constant(aff)).value();
    auto b = reallocate(t.constant(permute_rows(src, perm)), t.constant(aff_p)).value();
    CHECK(max_abs_diff(a, b) < 1e-12);
  }

  SUBCASE("convex-combination bound") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t ni = 1 + rng() % 9, nj = 1 + rng() % 9, k = 1 + rng() % 5;
      Tensor fi = random_tensor({ni, k}, rng, -4, 4), fj = random_tensor({nj, k}, rng, -4, 4);
      auto a = cross_affinity(t.constant(fi), t.constant(fj), t.constant(random_tensor({k, k}, rng, -2, 2)));
      auto out = reallocate(t.constant(fj), a.row_norm).value();
      for (std::size_t c = 0; c < k; ++c) {
        double lo = fj(0, c), hi = fj(0, c);
        for (std::size_t r = 0; r < nj; ++r) {
          lo = std::min(lo, fj(r, c));
          hi = std::max(hi, fj(r, c));
        }
        for (std::size_t r = 0; r < ni; ++r) {
          CHECK(out(r, c) >= lo - 1e-12);
          CHECK(out(r, c) <= hi + 1e-12);
        }
      }
    }
  }

  SUBCASE("source permutation leaves the reallocated map unchanged") {
    Tensor fi = random_tensor({6, 3}, rng), fj = random_tensor({9, 3}, rng), w = random_tensor({3, 3}, rng);
    auto base = reallocate(t.constant(fj), cross_affinity(t.constant(fi), t.constant(fj), t.constant(w)).row_norm);
    auto perm = shuffled(9, 3);
    Tensor fjp = permute_rows(fj, perm);
    auto moved = reallocate(t.constant(fjp), cross_affinity(t.constant(fi), t.constant(fjp), t.constant(w)).row_norm);
    CHECK(max_abs_diff(base.value(), moved.value()) < 1e-9);
  }

  CHECK_THROWS_AS(reallocate_cross(source, t.constant(Tensor({2, 3})), {target[0], target[1]}, 1), DimensionError);
  CHECK_THROWS_AS(reallocate_cross(source, t.constant(Tensor({2, 4})), target, 1), DimensionError);
}

TEST_CASE("cr_loss") {
  Tape t;
  Var z = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(cr_loss(z, z).value().item() == 0.0);
  CHECK_THROWS_AS(cr_loss(z, t.constant(Tensor({1, 2}))), DimensionError);

  SUBCASE("single-point crops") {
    auto cfg = tiny_config();
    Backbone net(cfg);
    auto ci = prepare_crop(single_point({0, 0, 0}, {0.2, 0.5, 0.9}, 1, 3), cfg, 0);
    auto cj = prepare_crop(single_point({4, 1, 2}, {0.7, 0.1, 0.3}, 2, 3), cfg, 0);
    Tape tp;
    Parameter wc("w_c", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 1));
    LossConfig lc;
    auto r = stage1_loss(tp, net, wc, ci, cj, lc);
    REQUIRE(r.affinity);
    CHECK(r.affinity->row_norm.value() == Tensor::matrix({{1}}));
    auto dec_j_on_i = net.decode_from_hook(tp, ci.geometry, r.j.features.hook, r.i.features.encoded);
    CHECK(r.logits_j_cross.value() == dec_j_on_i.value());
    const double expected = frobenius_sq_mean(r.i.logits, dec_j_on_i).value().item();
    CHECK(cr_loss(r.i.logits, r.logits_j_cross).value().item() == expected);
  }

  SUBCASE("toy pair matches a composition of tested ops") {
    auto cfg = tiny_config();
    Backbone net(cfg);
    auto ci = prepare_crop(toy_crop(40, 1), cfg, 0);
    auto cj = prepare_crop(toy_crop(50, 2, 3, 1.0, 3, {5, 5, 0}), cfg, 0);
    Parameter wc("w_c", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 4));
    Tape tp;
    LossConfig lc;
    auto r = stage1_loss(tp, net, wc, ci, cj, lc);

    Tape oracle;
    auto hi = net.forward_to_hook(oracle, ci.geometry, oracle.constant(ci.features));
    auto hj = net.forward_to_hook(oracle, cj.geometry, oracle.constant(cj.features));
    Tensor zi = net.decode_from_hook(oracle, ci.geometry, hi.hook, hi.encoded).value();
    Tensor zj = net.decode_from_hook(oracle, cj.geometry, hj.hook, hj.encoded).value();
    Tensor fi = hi.hook.features.value(), fj = hj.hook.features.value();
    Tensor raw = bilinear_affinity_oracle(fi, wc.value(), fj);
    Tensor fcj = matmul_oracle(softmax_rows_oracle(raw), fj);
    Tensor fci = matmul_oracle(softmax_rows_oracle(transpose_oracle(raw)), fi);
    FeatureMap mj{hi.hook.positions, oracle.constant(fcj), hi.hook.level};
    FeatureMap mi{hj.hook.positions, oracle.constant(fci), hj.hook.level};
    Tensor zcj = net.decode_from_hook(oracle, ci.geometry, mj, hi.encoded).value();
    Tensor zci = net.decode_from_hook(oracle, cj.geometry, mi, hj.encoded).value();
    auto mean_sq = [](const Tensor& a, const Tensor& b) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      return s / static_cast<double>(a.size());
    };
    const double cr = mean_sq(zi, zcj) + mean_sq(zj, zci);
    CHECK(std::abs(r.report.terms.at("cr") - cr) < 1e-12);
    const double seg = masked_ce_oracle(zi, ci.one_hot, ci.mask) + masked_ce_oracle(zj, cj.one_hot, cj.mask);
    CHECK(std::abs(r.report.terms.at("seg_basic") - seg) < 1e-12);
    CHECK(std::abs(r.total.value().item() - (seg + cr)) < 1e-12);
  }
}

TEST_CASE("stage1_loss") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto ci = prepare_crop(toy_crop(60, 11), cfg, 0);
  auto cj = prepare_crop(toy_crop(45, 12, 3, 0.8), cfg, 0);
  Parameter wc("w_c", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 2));

  SUBCASE("identical crops give symmetric cross terms") {
    Parameter sym("w_c", Tensor::identity(static_cast<std::size_t>(cfg.hook_width)));
    Tape t;
    auto r = stage1_loss(t, net, sym, ci, ci, LossConfig{});
    const double a = cr_loss(r.i.logits, r.logits_j_cross).value().item();
    const double b = cr_loss(r.j.logits, r.logits_i_cross).value().item();
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a > 0.0);
  }

  SUBCASE("zero cross weight decomposes into two baselines") {
    LossConfig lc;
    lc.cr_weight = 0.0;
    Tape t;
    auto r = stage1_loss(t, net, wc, ci, cj, lc);
    CHECK_FALSE(r.affinity.has_value());
    CHECK(r.report.terms.count("cr") == 0);
    Tape b;
    const double base =
        masked_softmax_cross_entropy(net.logits(b, ci.geometry, b.constant(ci.features)), ci.one_hot, ci.mask)
            .value()
            .item() +
        masked_softmax_cross_entropy(net.logits(b, cj.geometry, b.constant(cj.features)), cj.one_hot, cj.mask)
            .value()
            .item();
    CHECK(r.total.value().item() == doctest::Approx(base).epsilon(1e-14));
    CHECK(wc.access_count() == 0);
  }

  SUBCASE("seg_c adds the cross-branch segmentation terms") {
    LossConfig lc;
    lc.seg_c = true;
    Tape t;
    auto r = stage1_loss(t, net, wc, ci, cj, lc);
    REQUIRE(r.report.terms.count("seg_c") == 1);
    const double sc =
        masked_softmax_cross_entropy(r.logits_j_cross, ci.one_hot, ci.mask).value().item() +
        masked_softmax_cross_entropy(r.logits_i_cross, cj.one_hot, cj.mask).value().item();
    CHECK(r.report.terms.at("seg_c") == doctest::Approx(sc).epsilon(1e-14));
    CHECK(r.total.value().item() ==
          doctest::Approx(r.report.terms.at("seg_basic") + r.report.terms.at("cr") + sc).epsilon(1e-12));
  }
}

TEST_CASE("stage1 gradient matches finite differences") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto ci = prepare_crop(toy_crop(16, 41, 3, 0.6, 2), cfg, 0);
  auto cj = prepare_crop(toy_crop(16, 42, 3, 0.6, 2), cfg, 0);
  Parameter wc("w_c", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 3));
  auto params = net.parameter_list();
  params.push_back(&wc);
  auto gc = check_gradients(
      params, [&](Tape& tp) { return stage1_loss(tp, net, wc, ci, cj, LossConfig{}).total; }, 1e-6);
  INFO(gc.worst);
  CHECK(gc.max_rel < 1e-4);
}

TEST_CASE("gradient re-routing into the unlabeled crop") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto labeled = toy_crop(40, 51, 3, 0.8, 1);
  auto unlabeled = toy_crop(40, 52, 3, 0.8, 1);
  std::fill(unlabeled.weak_mask.begin(), unlabeled.weak_mask.end(), 0);
  auto ci = prepare_crop(labeled, cfg, 0);
  auto cj = prepare_crop(unlabeled, cfg, 0);
  CHECK(ci.num_labeled == 40);
  CHECK(cj.num_labeled == 0);
  Parameter wc("w_c", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 5));

  auto grad_norm_on_j = [&](const LossConfig& lc) {
    Tape t;
    auto r = stage1_loss(t, net, wc, ci, cj, lc);
    t.backward(r.total);
    double s = 0.0;
    std::vector<Tensor> grads{t.grad(r.j.features.hook.features)};
    for (const auto& level : r.j.features.encoded) grads.push_back(t.grad(level.features));
    for (const auto& g : grads)
      for (double v : g.data()) s += v * v;
    return s;
  };
  CHECK(grad_norm_on_j(LossConfig{}) > 0.0);
  LossConfig off;
  off.cr_weight = 0.0;
  CHECK(grad_norm_on_j(off) == 0.0);
}
