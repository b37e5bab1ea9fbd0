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

#include "dsprop/dataset.hpp"

#include <bit>
#include <cstdio>

#include <spdlog/spdlog.h>

#include "dsprop/errors.hpp"

namespace dsprop {

namespace {

constexpr double kIndexCell = 0.5;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ std::rotl(b, 29) ^ 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t Dataset::num_input_points() const {
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.input.size();
  return n;
}

std::size_t Dataset::num_original_points() const {
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.original.size();
  return n;
}

SceneData prepare_scene(PointCloud original, const DataOptions& options, std::uint64_t scene_seed) {
  original.validate();
  if (original.size() == 0) throw ConfigError("scene " + original.scene_id + " has no points");
  SceneData s;
  s.id = original.scene_id;
  s.cell = cell_for_ratio(original.positions, options.input_ratio);
  auto sub = subsample_cloud(original, s.cell);
  s.map = std::move(sub.map);
  s.input = options.weak_labels ? sample_weak_labels(sub.cloud, options.weak_fraction, scene_seed)
                                 : std::move(sub.cloud);
  s.index = std::make_shared<GridIndex>(s.input.positions, kIndexCell);
  s.original = std::move(original);
  spdlog::debug("scene {}: {} -> {} points (cell {:.4f}, ratio {:.4f})", s.id, s.original.size(),
                s.input.size(), s.cell,
                static_cast<double>(s.input.size()) / static_cast<double>(s.original.size()));
  return s;
}

Dataset make_dataset(std::vector<PointCloud> clouds, std::int32_t num_classes, const DataOptions& options) {
  if (clouds.empty()) throw ConfigError("dataset split is empty");
  Dataset d;
  d.num_classes = num_classes;
  for (auto& c : clouds) {
    if (c.num_classes != num_classes)
      throw ConfigError("scene " + c.scene_id + " has " + std::to_string(c.num_classes) +
                        " classes, expected " + std::to_string(num_classes));
    std::uint64_t seed = mix_seed(options.label_seed, fnv1a(c.scene_id));
    d.scenes.push_back(prepare_scene(std::move(c), options, seed));
  }
  for (std::uint32_t s = 0; s < d.scenes.size(); ++s) {
    const auto& mask = d.scenes[s].input.weak_mask;
    for (std::uint32_t i = 0; i < mask.size(); ++i)
      if (mask[i]) d.labeled.emplace_back(s, i);
  }
  if (options.weak_labels && d.labeled.empty()) throw ConfigError("dataset has no weakly labeled points");
  spdlog::info("dataset: {} scenes, {} original points, {} input points ({:.2f}%), {} labeled", d.scenes.size(),
               d.num_original_points(), d.num_input_points(),
               100.0 * static_cast<double>(d.num_input_points()) / static_cast<double>(d.num_original_points()),
               d.labeled.size());
  return d;
}

Dataset load_dataset(const Manifest& manifest, const std::string& split, const DataOptions& options) {
  auto entries = manifest.split(split);
  if (entries.empty()) throw ConfigError("split '" + split + "' is empty");
  std::vector<PointCloud> clouds;
  for (const auto* e : entries) clouds.push_back(read_cloud(manifest.root / e->file));
  Dataset d = make_dataset(std::move(clouds), manifest.num_classes, options);
  d.class_names = manifest.class_names;
  return d;
}

Crop make_crop(const Dataset& data, std::uint32_t scene, const Vec3& center, double radius) {
  const auto& s = data.scenes.at(scene);
  Crop c;
  c.scene = scene;
  c.sphere = ball_crop(s.input, *s.index, center, radius);
  c.cloud = extract(s.input, c.sphere);
  c.classes = labeled_classes(s.input, c.sphere);
  return c;
}

Crop draw_labeled_crop(const Dataset& data, double radius, std::mt19937_64& rng) {
  if (data.labeled.empty()) throw ConfigError("no weakly labeled points to centre crops on");
  std::uniform_int_distribution<std::size_t> pick(0, data.labeled.size() - 1);
  auto [scene, point] = data.labeled[pick(rng)];
  return make_crop(data, scene, data.scenes[scene].input.positions[point], radius);
}

std::pair<Crop, Crop> draw_crop_pair(const Dataset& data, double radius, std::mt19937_64& rng) {
  CropDraw<Crop> draw = [&](std::mt19937_64& r) {
    Crop c = draw_labeled_crop(data, radius, r);
    auto classes = c.classes;
    return std::make_pair(std::move(c), std::move(classes));
  };
  return sample_pair(draw, rng);
}

std::vector<Crop> cover_scene(const Dataset& data, std::uint32_t scene, double radius) {
  const auto& s = data.scenes.at(scene);
  std::vector<std::uint8_t> covered(s.input.size(), 0);
  std::vector<Crop> crops;
  for (std::uint32_t i = 0; i < s.input.size(); ++i) {
    if (covered[i]) continue;
    const Vec3 center = s.input.positions[i];
    for (auto n : s.index->radius_search(center, 0.5 * radius)) covered[n] = 1;
    crops.push_back(make_crop(data, scene, center, radius));
  }
  return crops;
}

Manifest generate_dataset(const SceneSpec& spec, const std::filesystem::path& dir, int scenes, int test_scenes,
                          std::uint64_t seed) {
  if (scenes < 1) throw ConfigError("generate_dataset: need at least one scene");
  if (test_scenes < 0 || test_scenes > scenes) throw ConfigError("generate_dataset: test scenes out of range");
  std::filesystem::create_directories(dir);
  Manifest m;
  m.num_classes = spec.num_classes;
  m.class_names.resize(static_cast<std::size_t>(spec.num_classes));
  for (const auto& c : spec.classes) m.class_names[static_cast<std::size_t>(c.class_id)] = c.name;
  for (int k = 0; k < scenes; ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", k);
    const std::uint64_t scene_seed = mix_seed(seed, static_cast<std::uint64_t>(k));
    PointCloud cloud = generate_scene(spec, scene_seed);
    cloud.scene_id = id;
    const std::string file = std::string(id) + ".dspc";
    write_cloud(cloud, dir / file);
    m.scenes.push_back({id, file, k < scenes - test_scenes ? "train" : "test", scene_seed});
    spdlog::info("{}: {} points", id, cloud.size());
  }
  write_manifest(m, dir / "manifest.json");
  m.root = dir;
  return m;
}

}  // namespace dsprop
