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
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dsprop/backbone.hpp"
#include "dsprop/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dsprop;
using namespace dsprop::testing;

namespace {

Tensor crop_input(const PointCloud& c) {
  Tensor t({c.size(), 4});
  for (std::size_t i = 0; i < c.size(); ++i) {
    t(i, 0) = 1.0;
    for (int d = 0; d < 3; ++d) t(i, 1 + static_cast<std::size_t>(d)) = c.colors[i][d];
  }
  return t;
}

Tensor run_logits(Backbone& net, const PointCloud& c, std::uint64_t cap_seed = 1) {
  auto geo = build_crop_geometry(c.positions, net.config(), cap_seed);
  Tape tape;
  return net.logits(tape, geo, tape.constant(crop_input(c))).value();
}

}  // namespace

TEST_CASE("kp_conv") {
  Tape t;
  SUBCASE("single neighbour at the query") {
    std::vector<Vec3> q{{1, 2, 3}};
    std::vector<std::vector<std::uint32_t>> nb{{0}};
    std::vector<Vec3> k{{0, 0, 0}};
    auto g = build_kernel_geometry(q, q, nb, k, 0.5);
    Tensor f = Tensor::matrix({{2.0, -1.0}});
    Tensor w(Shape{1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    auto out = kp_conv(t.constant(f), g, t.constant(w)).value();
    CHECK(out == Tensor::matrix({{-2.0, -1.0, 0.0}}));
  }
  SUBCASE("neighbour beyond sigma contributes nothing") {
    std::vector<Vec3> q{{0, 0, 0}}, s{{0, 0, 0}, {3, 0, 0}};
    std::vector<std::vector<std::uint32_t>> nb{{1}};
    auto k = kernel_offsets(7, 1.0);
    auto g = build_kernel_geometry(q, s, nb, k, 1.0);
    CHECK(g.entries.empty());
    std::mt19937_64 rng(1);
    auto out = kp_conv(t.constant(random_tensor({2, 2}, rng)), g, t.constant(random_tensor({7, 2, 3}, rng))).value();
    for (double v : out.data()) CHECK(v == 0.0);
  }
  SUBCASE("two neighbours on one kernel point: raw sum and weighted mean") {
    std::vector<Vec3> q{{0, 0, 0}}, s{{0, 0, 0}, {0.5, 0, 0}};
    std::vector<std::vector<std::uint32_t>> nb{{0, 1}};
    std::vector<Vec3> k{{0, 0, 0}};
    Tensor f = Tensor::matrix({{2.0}, {4.0}});
    Tensor w(Shape{1, 1, 1}, std::vector<double>{3.0});
    auto raw = kp_conv(t.constant(f), build_kernel_geometry(q, s, nb, k, 1.0, false), t.constant(w)).value();
    CHECK(raw[0] == doctest::Approx((1.0 * 2.0 + 0.5 * 4.0) * 3.0).epsilon(1e-15));
    auto mean = kp_conv(t.constant(f), build_kernel_geometry(q, s, nb, k, 1.0, true), t.constant(w)).value();
    CHECK(mean[0] == doctest::Approx((1.0 * 2.0 + 0.5 * 4.0) / 1.5 * 3.0).epsilon(1e-15));
  }
  SUBCASE("four-point layout equals the double-loop oracle") {
    std::vector<Vec3> pts{{0, 0, 0}, {0.3, 0.1, 0}, {-0.2, 0.4, 0.1}, {0.1, -0.3, 0.25}};
    std::vector<std::vector<std::uint32_t>> nb{{0, 1, 2, 3}, {0, 1}, {2, 0, 3}, {3}};
    auto kernels = kernel_offsets(15, 0.3);
    std::mt19937_64 rng(2);
    Tensor f = random_tensor({4, 3}, rng), w = random_tensor({15, 3, 2}, rng);
    for (bool normalize : {false, true}) {
      auto g = build_kernel_geometry(pts, pts, nb, kernels, 0.36, normalize);
      auto got = kp_conv(t.constant(f), g, t.constant(w)).value();
      CHECK(max_abs_diff(got, kp_conv_oracle(pts, pts, nb, kernels, 0.36, f, w, normalize)) < 1e-12);
    }
  }
  SUBCASE("random toy instances") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 25; ++trial) {
      auto c = toy_crop(10 + trial, 100 + trial, 2, 0.6);
      const int nk = trial % 3 == 0 ? 1 : (trial % 3 == 1 ? 7 : 15);
      auto kernels = kernel_offsets(nk, 0.2);
      const double radius = 0.45;
      std::vector<std::vector<std::uint32_t>> nb(c.size());
      for (std::uint32_t a = 0; a < c.size(); ++a)
        for (std::uint32_t b = 0; b < c.size(); ++b)
          if (distance(c.positions[a], c.positions[b]) <= radius) nb[a].push_back(b);
      Tensor f = random_tensor({c.size(), 3}, rng), w = random_tensor({static_cast<std::size_t>(nk), 3, 4}, rng);
      const bool normalize = trial % 2 == 0;
      auto g = build_kernel_geometry(c.positions, c.positions, radius, kernels, 0.25, normalize);
      auto got = kp_conv(t.constant(f), g, t.constant(w)).value();
      CHECK(max_abs_diff(got, kp_conv_oracle(c.positions, c.positions, nb, kernels, 0.25, f, w, normalize)) < 1e-12);
    }
  }
  SUBCASE("errors") {
    std::vector<Vec3> q{{0, 0, 0}};
    std::vector<std::vector<std::uint32_t>> nb{{4}};
    auto k = kernel_offsets(1, 1.0);
    CHECK_THROWS_AS(build_kernel_geometry(q, q, nb, k, 1.0), IndexError);
    auto g = build_kernel_geometry(q, q, 1.0, k, 1.0);
    CHECK_THROWS_AS(kp_conv(t.constant(Tensor({1, 2})), g, t.constant(Tensor({1, 3, 2}))), DimensionError);
  }
  SUBCASE("kernel offsets lie within the influence radius") {
    for (int n : {1, 7, 15}) {
      auto k = kernel_offsets(n, 0.7);
      CHECK(k.size() == static_cast<std::size_t>(n));
      for (const auto& v : k) CHECK(std::sqrt(squared_norm(v)) <= 0.7 + 1e-12);
    }
  }
}

TEST_CASE("kp_conv gradients") {
  auto c = toy_crop(12, 9, 2, 0.5);
  auto kernels = kernel_offsets(7, 0.2);
  auto g = build_kernel_geometry(c.positions, c.positions, 0.5, kernels, 0.25);
  std::mt19937_64 rng(4);
  Parameter f("f", random_tensor({12, 3}, rng)), w("w", random_tensor({7, 3, 2}, rng));
  Tensor target = random_tensor({12, 2}, rng);
  auto gc = check_gradients({&f, &w}, [&](Tape& tp) {
    return frobenius_sq_mean(kp_conv(tp.param(f), g, tp.param(w)), tp.constant(target));
  });
  CHECK(gc.max_rel < 1e-6);
}

TEST_CASE("encode") {
  SUBCASE("single point, single level") {
    BackboneConfig cfg;
    cfg.levels = 1;
    cfg.widths = {5};
    cfg.num_classes = 2;
    Backbone net(cfg);
    std::vector<Vec3> one{{0.4, 0.1, 1.0}};
    auto geo = build_crop_geometry(one, cfg, 0);
    Tape t;
    auto maps = net.encode(t, geo, t.constant(Tensor::matrix({{1, 0.5, 0.5, 0.5}})));
    REQUIRE(maps.size() == 1);
    CHECK(maps[0].features.value().rows() == 1);
    CHECK(maps[0].features.value().cols() == 5);
    CHECK(maps[0].positions.size() == 1);
  }

  SUBCASE("linear mode is linear in the input") {
    auto cfg = tiny_config();
    cfg.linear = true;
    Backbone net(cfg);
    auto c = toy_crop(80, 5);
    auto geo = build_crop_geometry(c.positions, cfg, 0);
    Tensor x = crop_input(c);
    Tensor x2 = x;
    for (double& v : x2.data()) v *= 2.0;
    Tape t;
    auto a = net.encode(t, geo, t.constant(x));
    auto b = net.encode(t, geo, t.constant(x2));
    for (std::size_t l = 0; l < a.size(); ++l) {
      Tensor doubled = a[l].features.value();
      for (double& v : doubled.data()) v *= 2.0;
      CHECK(max_abs_diff(doubled, b[l].features.value()) < 1e-10);
    }
  }

  SUBCASE("deterministic") {
    auto c = toy_crop(120, 6);
    Backbone n1(tiny_config()), n2(tiny_config());
    CHECK(run_logits(n1, c) == run_logits(n2, c));
    CHECK(run_logits(n1, c) == run_logits(n1, c));
  }

  SUBCASE("tiny crops still produce every level") {
    auto c = toy_crop(3, 8, 3, 0.05);
    Backbone net(tiny_config());
    auto geo = build_crop_geometry(c.positions, net.config(), 0);
    CHECK(geo.levels.back().positions.size() == 1);
    CHECK(run_logits(net, c).rows() == 3);
  }
}

TEST_CASE("decode_to_hook") {
  SUBCASE("one coarse point broadcasts") {
    BackboneConfig cfg;
    cfg.levels = 2;
    cfg.first_cell = 0.1;
    cfg.widths = {4, 4};
    cfg.hook_width = 4;
    cfg.skip_connections = false;
    cfg.num_classes = 2;
    Backbone net(cfg);
    auto c = toy_crop(30, 2, 2, 0.04);
    auto geo = build_crop_geometry(c.positions, cfg, 0);
    REQUIRE(geo.levels[1].positions.size() == 1);
    Tape t;
    auto f = net.forward_to_hook(t, geo, t.constant(crop_input(c)));
    const Tensor& h = f.hook.features.value();
    CHECK(h.rows() == 30);
    for (std::size_t i = 1; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) CHECK(h(i, j) == h(0, j));
  }

  SUBCASE("identity unary without skips is a nearest-neighbour copy") {
    auto cfg = tiny_config();
    cfg.skip_connections = false;
    cfg.linear = true;
    cfg.hook_width = cfg.widths.back();
    Backbone net(cfg);
    net.param("dec.hook").value() = Tensor::identity(static_cast<std::size_t>(cfg.hook_width));
    auto c = toy_crop(150, 12);
    auto geo = build_crop_geometry(c.positions, cfg, 0);
    Tape t;
    auto f = net.forward_to_hook(t, geo, t.constant(crop_input(c)));
    const Tensor& deep = f.encoded.back().features.value();
    const Tensor& hook = f.hook.features.value();
    const auto& fine = geo.levels[1].positions;
    const auto& coarse = geo.levels[2].positions;
    for (std::size_t i = 0; i < fine.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < coarse.size(); ++j)
        if (distance(fine[i], coarse[j]) < distance(fine[i], coarse[best])) best = j;
      for (std::size_t k = 0; k < hook.cols(); ++k) CHECK(hook(i, k) == deep(best, k));
    }
  }

  SUBCASE("hook shape follows the configuration") {
    auto cfg = tiny_config();
    Backbone net(cfg);
    auto c = toy_crop(200, 13);
    auto geo = build_crop_geometry(c.positions, cfg, 0);
    Tape t;
    auto f = net.forward_to_hook(t, geo, t.constant(crop_input(c)));
    const auto expected_rows = grid_subsample(c.positions, cfg.cell(1)).coarse_size();
    CHECK(f.hook.features.value().rows() == expected_rows);
    CHECK(f.hook.features.value().cols() == static_cast<std::size_t>(cfg.hook_width));
    CHECK(f.hook.positions.size() == expected_rows);
    CHECK(f.hook.level == 1);

    cfg.hook_cap = 10;
    Backbone capped(cfg);
    auto geo2 = build_crop_geometry(c.positions, cfg, 0);
    Tape t2;
    auto f2 = capped.forward_to_hook(t2, geo2, t2.constant(crop_input(c)));
    CHECK(f2.hook.features.value().rows() == 10);
    CHECK(capped.decode_from_hook(t2, geo2, f2.hook, f2.encoded).value().rows() == 200);
  }

  SUBCASE("level mismatch") {
    auto cfg = tiny_config();
    Backbone net(cfg);
    auto c = toy_crop(40, 1);
    auto geo = build_crop_geometry(c.positions, cfg, 0);
    Tape t;
    auto f = net.forward_to_hook(t, geo, t.constant(crop_input(c)));
    f.encoded.pop_back();
    CHECK_THROWS_AS(net.decode_to_hook(t, geo, f.encoded), DimensionError);
  }
}

TEST_CASE("decode_from_hook") {
  auto cfg = tiny_config(1);
  Backbone net(cfg);
  auto c = toy_crop(60, 3, 1);
  auto geo = build_crop_geometry(c.positions, cfg, 0);
  Tape t;
  auto f = net.forward_to_hook(t, geo, t.constant(crop_input(c)));
  auto z1 = net.decode_from_hook(t, geo, f.hook, f.encoded).value();
  auto z2 = net.decode_from_hook(t, geo, f.hook, f.encoded).value();
  CHECK(z1.rows() == 60);
  CHECK(z1.cols() == 1);
  CHECK(z1 == z2);

  FeatureMap wrong = f.hook;
  wrong.features = t.constant(Tensor({3, static_cast<std::size_t>(cfg.hook_width)}));
  CHECK_THROWS_AS(net.decode_from_hook(t, geo, wrong, f.encoded), DimensionError);
}

TEST_CASE("end-to-end gradient matches finite differences") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto crop = toy_crop(70, 21);
  auto sample = prepare_crop(crop, cfg, 0);
  std::vector<Parameter*> middle{&net.param("enc1.kp2"), &net.param("dec.hook")};
  auto gc = check_gradients(
      middle,
      [&](Tape& tp) {
        return masked_softmax_cross_entropy(net.logits(tp, sample.geometry, tp.constant(sample.features)),
                                            sample.one_hot, sample.mask);
      },
      1e-6);
  INFO(gc.worst);
  CHECK(gc.max_rel < 1e-4);
  CHECK(gc.checked > 100);
}

TEST_CASE("geometric invariances") {
  auto cfg = tiny_config();
  Backbone net(cfg);
  auto c = toy_crop(250, 31, 3, 1.2);
  const Tensor base = run_logits(net, c);

  SUBCASE("permuting points permutes logits") {
    std::vector<std::size_t> perm(c.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(2);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud p = c;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.positions[i] = c.positions[perm[i]];
      p.colors[i] = c.colors[perm[i]];
      p.labels[i] = c.labels[perm[i]];
    }
    const Tensor z = run_logits(net, p);
    double worst = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) worst = std::max(worst, std::abs(z(i, j) - base(perm[i], j)));
    CHECK(worst <= 1e-9);
  }

  SUBCASE("translating the crop leaves logits unchanged") {
    for (Vec3 shift : {Vec3{10.25, -4.5, 2.125}, Vec3{-0.37, 0.91, 13.3}}) {
      PointCloud moved = c;
      for (auto& p : moved.positions) p = p + shift;
      CHECK(max_abs_diff(run_logits(net, moved), base) <= 1e-9);
    }
  }
}

TEST_CASE("backbone config validation") {
  BackboneConfig cfg;
  cfg.kernel_points = 5;
  CHECK_THROWS_AS(Backbone{cfg}, ConfigError);
  cfg = BackboneConfig{};
  cfg.widths = {8, 8};
  CHECK_THROWS_AS(Backbone{cfg}, ConfigError);
  Backbone net{BackboneConfig{}};
  CHECK_THROWS_AS(net.param("nope"), ConfigError);
  CHECK(net.param("head.bias").value().size() == 7);
}
