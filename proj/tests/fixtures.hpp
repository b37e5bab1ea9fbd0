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

#include <cmath>
#include <random>

#include "dsprop/backbone.hpp"
#include "dsprop/config.hpp"
#include "dsprop/dataset.hpp"
#include "dsprop/pointcloud.hpp"
#include "dsprop/scene.hpp"

namespace dsprop::testing {

// Points scattered in a ball, random colors and labels, every `stride`-th
// point weakly labeled.
inline PointCloud toy_crop(std::size_t n, std::uint64_t seed, int classes = 3, double radius = 1.0,
                           std::size_t stride = 3, Vec3 center = {0, 0, 0}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.0, 1.0);
  PointCloud c;
  c.num_classes = classes;
  c.scene_id = "toy";
  while (c.size() < n) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    if (squared_norm(p) > 1.0) continue;
    c.positions.push_back({center[0] + radius * p[0], center[1] + radius * p[1], center[2] + radius * p[2]});
    c.colors.push_back({unit(rng), unit(rng), unit(rng)});
    c.labels.push_back(static_cast<std::int32_t>(rng() % static_cast<unsigned>(classes)));
    c.weak_mask.push_back((c.size() - 1) % stride == 0 ? 1 : 0);
  }
  return c;
}

inline BackboneConfig tiny_config(int classes = 3) {
  BackboneConfig cfg;
  cfg.levels = 3;
  cfg.first_cell = 0.15;
  cfg.widths = {4, 8, 8};
  cfg.hook_width = 6;
  cfg.decoder_width = 6;
  cfg.num_classes = classes;
  cfg.init_seed = 3;
  return cfg;
}

// Small sparse rooms: a few thousand points each.
inline SceneSpec toy_scene_spec() {
  SceneSpec s = SceneSpec::default_indoor();
  s.room_min = {4.0, 3.5, 2.6};
  s.room_max = {5.0, 4.5, 2.8};
  s.density = 40.0;
  return s;
}

inline std::vector<PointCloud> toy_scenes(int count, std::uint64_t seed) {
  std::vector<PointCloud> out;
  for (int k = 0; k < count; ++k) {
    PointCloud c = generate_scene(toy_scene_spec(), seed + static_cast<std::uint64_t>(k));
    c.scene_id = "toy_" + std::to_string(k);
    out.push_back(std::move(c));
  }
  return out;
}

inline Dataset toy_dataset(int count = 4, std::uint64_t seed = 5, double weak_fraction = 0.05,
                           bool weak = true) {
  return make_dataset(toy_scenes(count, seed), 7, {0.15, weak_fraction, 9, weak});
}

inline TrainConfig toy_train_config(TrainMode mode = TrainMode::kCsfrIsfr) {
  TrainConfig c;
  c.mode = mode;
  c.seed = 4;
  c.crop_radius = 0.9;
  c.input_ratio = 0.15;
  c.weak_fraction = 0.05;
  c.stage1_epochs = 1;
  c.stage2_epochs = 1;
  c.steps_per_epoch = 2;
  c.model = tiny_config(7);
  c.model.first_cell = 0.3;
  return c;
}

}  // namespace dsprop::testing
