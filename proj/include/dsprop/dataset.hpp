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
#include <filesystem>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dsprop/cloud_io.hpp"
#include "dsprop/geometry.hpp"
#include "dsprop/pointcloud.hpp"
#include "dsprop/scene.hpp"

namespace dsprop {

// SplitMix64 finalizer over a ^ rotated b; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct DataOptions {
  double input_ratio = 0.04;
  double weak_fraction = 0.01;
  std::uint64_t label_seed = 1;
  bool weak_labels = true;  // false for evaluation splits
};

// One scene as seen by the network: the grid-subsampled input cloud with its
// weak labels, the map back to the original points and a radius index.
struct SceneData {
  std::string id;
  PointCloud original;
  PointCloud input;
  SubsampleMap map;
  double cell = 0.0;
  std::shared_ptr<const GridIndex> index;
};

struct Dataset {
  std::int32_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<SceneData> scenes;
  // (scene, input point) of every weakly labeled point, in scene order.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> labeled;

  std::size_t num_input_points() const;
  std::size_t num_original_points() const;
};

SceneData prepare_scene(PointCloud original, const DataOptions& options, std::uint64_t scene_seed);

Dataset make_dataset(std::vector<PointCloud> clouds, std::int32_t num_classes, const DataOptions& options);

// Throws ConfigError for an empty split.
Dataset load_dataset(const Manifest& manifest, const std::string& split, const DataOptions& options);

// Generates `scenes` scenes into `dir` (scene_XXX.dspc plus manifest.json);
// the last `test_scenes` go to the "test" split, the rest to "train".
Manifest generate_dataset(const SceneSpec& spec, const std::filesystem::path& dir, int scenes, int test_scenes,
                          std::uint64_t seed);

// A training crop cut from the input cloud of one scene.
struct Crop {
  std::uint32_t scene = 0;
  SphereCrop sphere;
  PointCloud cloud;
  std::set<std::int32_t> classes;  // weakly labeled classes present
};

Crop make_crop(const Dataset& data, std::uint32_t scene, const Vec3& center, double radius);

// Centre drawn uniformly over all weakly labeled input points, so every crop
// carries at least one label.
Crop draw_labeled_crop(const Dataset& data, double radius, std::mt19937_64& rng);

// Two crops with a common labeled class (rejection sampling).
std::pair<Crop, Crop> draw_crop_pair(const Dataset& data, double radius, std::mt19937_64& rng);

// Crops whose centres are picked greedily until every input point lies within
// radius/2 of some centre. Deterministic; ordered by scene then centre.
std::vector<Crop> cover_scene(const Dataset& data, std::uint32_t scene, double radius);

}  // namespace dsprop
