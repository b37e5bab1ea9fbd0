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
#include <random>

#include "doctest.h"
#include "dsprop/errors.hpp"
#include "dsprop/isfr.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dsprop;
using namespace dsprop::testing;

TEST_CASE("self_affinity") {
  Tape t;
  std::mt19937_64 rng(1);
  SUBCASE("one point") {
    auto a = self_affinity(t.constant(random_tensor({1, 3}, rng)), t.constant(random_tensor({3, 3}, rng)));
    CHECK(a.norm.value() == Tensor::matrix({{1}}));
  }
  SUBCASE("zero weights give uniform rows") {
    auto a = self_affinity(t.constant(random_tensor({5, 3}, rng)), t.constant(Tensor({3, 3})));
    for (double v : a.norm.value().data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("four points against the triple-loop oracle") {
    Tensor f = random_tensor({4, 3}, rng), w = random_tensor({3, 3}, rng);
    auto a = self_affinity(t.constant(f), t.constant(w));
    const Tensor raw = bilinear_affinity_oracle(f, w, f);
    CHECK(max_abs_diff(a.raw.value(), raw) < 1e-12);
    CHECK(max_abs_diff(a.norm.value(), softmax_rows_oracle(transpose_oracle(raw))) < 1e-12);
  }
  SUBCASE("rows are distributions") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t n = 1 + rng() % 15, k = 1 + rng() % 6;
      auto a = self_affinity(t.constant(random_tensor({n, k}, rng, -3, 3)),
                             t.constant(random_tensor({k, k}, rng, -3, 3)));
      const Tensor& norm = a.norm.value();
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (double v : norm.row(r)) s += v;
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(self_affinity(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 2}))), DimensionError);
}

TEST_CASE("reallocate_self") {
  Tape t;
  std::mt19937_64 rng(2);
  Tensor f = random_tensor({5, 3}, rng);
  CHECK(reallocate_self(t.constant(f), t.constant(Tensor::identity(5))).value() == f);

  auto uniform = self_affinity(t.constant(f), t.constant(Tensor({3, 3})));
  auto avg = reallocate_self(t.constant(f), uniform.norm).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 5; ++r) mean += f(r, c) / 5.0;
    for (std::size_t r = 0; r < 5; ++r) CHECK(avg(r, c) == doctest::Approx(mean).epsilon(1e-14));
  }

  SUBCASE("convex-combination bound") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t n = 1 + rng() % 12, k = 1 + rng() % 5;
      Tensor x = random_tensor({n, k}, rng, -5, 5);
      auto a = self_affinity(t.constant(x), t.constant(random_tensor({k, k}, rng, -2, 2)));
      auto out = reallocate_self(t.constant(x), a.norm).value();
      for (std::size_t c = 0; c < k; ++c) {
        double lo = x(0, c), hi = x(0, c);
        for (std::size_t r = 0; r < n; ++r) {
          lo = std::min(lo, x(r, c));
          hi = std::max(hi, x(r, c));
        }
        for (std::size_t r = 0; r < n; ++r) {
          CHECK(out(r, c) >= lo - 1e-12);
          CHECK(out(r, c) <= hi + 1e-12);
        }
      }
    }
  }
  CHECK_THROWS_AS(reallocate_self(t.constant(f), t.constant(Tensor::identity(4))), DimensionError);
}

TEST_CASE("sr_loss") {
  Tape t;
  Var z = t.constant(Tensor::matrix({{0.5, -1}, {2, 3}}));
  CHECK(sr_loss(z, z).value().item() == 0.0);
  CHECK(sr_loss(z, t.constant(Tensor::matrix({{1.5, -1}, {2, 3}}))).value().item() == doctest::Approx(0.25));
  CHECK_THROWS_AS(sr_loss(z, t.constant(Tensor({2, 3}))), DimensionError);

  SUBCASE("single-point crop") {
    auto cfg = tiny_config();
    Backbone net(cfg);
    auto crop = prepare_crop(toy_crop(1, 4), cfg, 0);
    Parameter ws("w_s", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 1));
    Tape tp;
    auto r = stage2_loss(tp, net, ws, crop, LossConfig{});
    CHECK(r.logits_self.value() == r.crop.logits.value());
    CHECK(r.report.terms.at("sr") == 0.0);
  }

  SUBCASE("value matches a composition of tested ops") {
    auto cfg = tiny_config();
    Backbone net(cfg);
    auto crop = prepare_crop(toy_crop(70, 5), cfg, 0);
    Parameter ws("w_s", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 2));
    Tape tp;
    auto r = stage2_loss(tp, net, ws, crop, LossConfig{});

    Tape oracle;
    auto fw = net.forward_to_hook(oracle, crop.geometry, oracle.constant(crop.features));
    const Tensor z = net.decode_from_hook(oracle, crop.geometry, fw.hook, fw.encoded).value();
    const Tensor f = fw.hook.features.value();
    const Tensor fs = matmul_oracle(softmax_rows_oracle(transpose_oracle(bilinear_affinity_oracle(f, ws.value(), f))), f);
    FeatureMap ms{fw.hook.positions, oracle.constant(fs), fw.hook.level};
    const Tensor zs = net.decode_from_hook(oracle, crop.geometry, ms, fw.encoded).value();
    double sr = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) sr += (zs[k] - z[k]) * (zs[k] - z[k]);
    sr /= static_cast<double>(z.size());
    CHECK(std::abs(r.report.terms.at("sr") - sr) < 1e-12);
    CHECK(std::abs(r.report.terms.at("seg_s") - masked_ce_oracle(zs, crop.one_hot, crop.mask)) < 1e-12);
    CHECK(std::abs(r.report.terms.at("seg_basic") - masked_ce_oracle(z, crop.one_hot, crop.mask)) < 1e-12);
  }
}

TEST_CASE("stage2_loss") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto crop = prepare_crop(toy_crop(80, 7), cfg, 0);
  Parameter ws("w_s", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 3));

  SUBCASE("only the basic term equals the baseline") {
    LossConfig lc;
    lc.sr = false;
    lc.seg_s = false;
    Tape t;
    auto r = stage2_loss(t, net, ws, crop, lc);
    Tape b;
    const double base =
        masked_softmax_cross_entropy(net.logits(b, crop.geometry, b.constant(crop.features)), crop.one_hot, crop.mask)
            .value()
            .item();
    CHECK(r.total.value().item() == base);
    CHECK(r.report.terms.size() == 1);
    CHECK(ws.access_count() == 0);
  }

  SUBCASE("identity reallocation doubles the segmentation loss") {
    auto full = toy_crop(40, 9, 3, 1.0, 1);
    auto sample = prepare_crop(full, cfg, 0);
    CHECK(sample.num_labeled == 40);
    const auto rows = sample.geometry.hook_positions.size();
    Tape t;
    auto r = stage2_loss(t, net, ws, sample, LossConfig{}, Tensor::identity(rows));
    CHECK(r.logits_self.value() == r.crop.logits.value());
    CHECK(r.report.terms.at("sr") == 0.0);
    CHECK(r.total.value().item() == doctest::Approx(2.0 * r.report.terms.at("seg_basic")).epsilon(1e-15));
  }

  SUBCASE("unlabeled crop has zero segmentation terms") {
    auto none = toy_crop(30, 10);
    std::fill(none.weak_mask.begin(), none.weak_mask.end(), 0);
    auto sample = prepare_crop(none, cfg, 0);
    Tape t;
    auto r = stage2_loss(t, net, ws, sample, LossConfig{});
    CHECK(r.report.terms.at("seg_basic") == 0.0);
    CHECK(r.report.terms.at("seg_s") == 0.0);
    CHECK(r.total.value().item() == r.report.terms.at("sr"));
  }

  SUBCASE("toggles reproduce the ablation rows") {
    for (bool sr : {false, true})
      for (bool seg_s : {false, true}) {
        LossConfig lc;
        lc.sr = sr;
        lc.seg_s = seg_s;
        Tape t;
        auto r = stage2_loss(t, net, ws, crop, lc);
        CHECK(r.report.terms.count("sr") == (sr ? 1u : 0u));
        CHECK(r.report.terms.count("seg_s") == (seg_s ? 1u : 0u));
        double sum = 0.0;
        for (const auto& [name, v] : r.report.terms) sum += v;
        CHECK(r.total.value().item() == doctest::Approx(sum).epsilon(1e-14));
      }
  }
}

TEST_CASE("stage2 gradient matches finite differences") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto crop = prepare_crop(toy_crop(16, 61, 3, 0.6, 2), cfg, 0);
  Parameter ws("w_s", init_affinity_weights(static_cast<std::size_t>(cfg.hook_width), 8));
  auto params = net.parameter_list();
  params.push_back(&ws);
  auto gc = check_gradients(
      params, [&](Tape& tp) { return stage2_loss(tp, net, ws, crop, LossConfig{}).total; }, 1e-6);
  INFO(gc.worst);
  CHECK(gc.max_rel < 1e-4);
}

TEST_CASE("supervision spreads through the self affinity") {
  SUBCASE("identical features, one labeled point") {
    std::mt19937_64 rng(4);
    const Tensor row = random_tensor({1, 3}, rng);
    Tensor f({2, 3});
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 3; ++c) f(r, c) = row(0, c);
    const Tensor head = random_tensor({3, 2}, rng);
    const Tensor w = init_affinity_weights(3, 1);
    const Tensor y = Tensor::matrix({{1, 0}, {0, 0}});
    const Tensor m(Shape{2}, std::vector<double>{1, 0});
    auto grad_b = [&](bool reallocating) {
      Tape t;
      Var fv = t.leaf(f);
      Var hv = t.constant(head);
      Var z = matmul(fv, hv);
      Var loss = masked_softmax_cross_entropy(z, y, m);
      if (reallocating) {
        Var zs = matmul(reallocate_self(fv, self_affinity(fv, t.constant(w)).norm), hv);
        loss = add(loss, add(masked_softmax_cross_entropy(zs, y, m), sr_loss(zs, z)));
      }
      t.backward(loss);
      const Tensor g = t.grad(fv);
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += g(1, c) * g(1, c);
      return s;
    };
    CHECK(grad_b(true) > 0.0);
    CHECK(grad_b(false) == 0.0);
  }

  SUBCASE("two-point crop through the full network") {
    BackboneConfig cfg;
    cfg.levels = 2;
    cfg.first_cell = 0.05;
    cfg.widths = {4, 6};
    cfg.hook_width = 5;
    cfg.num_classes = 2;
    Backbone net(cfg);
    PointCloud c;
    c.positions = {{0, 0, 0}, {0.4, 0, 0}};
    c.colors = {{0.3, 0.6, 0.2}, {0.3, 0.6, 0.2}};
    c.labels = {0, 1};
    c.weak_mask = {1, 0};
    c.num_classes = 2;
    auto sample = prepare_crop(c, cfg, 0);
    REQUIRE(sample.geometry.hook_positions.size() == 2);
    Parameter ws("w_s", init_affinity_weights(5, 2));
    auto grad_b = [&](const LossConfig& lc) {
      Tape t;
      auto r = stage2_loss(t, net, ws, sample, lc);
      t.backward(r.total);
      const Tensor g = t.grad(r.crop.features.hook.features);
      double s = 0.0;
      for (double v : g.row(1)) s += v * v;
      return s;
    };
    CHECK(grad_b(LossConfig{}) > 0.0);
    LossConfig off;
    off.sr = false;
    off.seg_s = false;
    CHECK(grad_b(off) == 0.0);
  }
}
