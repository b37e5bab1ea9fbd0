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
#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dsprop/geometry.hpp"

namespace dsprop {

// One scene or crop. positions in metres, colors in [0, 1], labels in [0, C).
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> weak_mask;
  std::string scene_id;
  std::int32_t num_classes = 0;

  std::size_t size() const noexcept { return positions.size(); }
  // Throws FormatError when array lengths or label ranges are inconsistent.
  void validate() const;

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

// Maps every original point to the representative of its occupied voxel.
struct SubsampleMap {
  std::vector<Vec3> coarse_positions;
  std::vector<std::uint32_t> parent;  // original point -> coarse index

  std::size_t coarse_size() const noexcept { return coarse_positions.size(); }
};

// One representative per occupied cell, placed at the centroid of its members.
// Cells are centred on the lattice min + k*cell anchored at the bounding-box
// minimum and emitted in key order; members are summed in position order.
SubsampleMap grid_subsample(std::span<const Vec3> positions, double cell);

// Grid subsampling of a full cloud: mean colors, majority labels (ties to the
// smaller label), weak mask cleared.
struct SubsampledCloud {
  PointCloud cloud;
  SubsampleMap map;
};
SubsampledCloud subsample_cloud(const PointCloud& cloud, double cell);

// Bisection on the cell size so that coarse/original is close to `ratio`.
double cell_for_ratio(std::span<const Vec3> positions, double ratio);

// Marks ceil(fraction * count_c) points of every class c, drawn uniformly
// without replacement. Pure function of (cloud, fraction, seed).
PointCloud sample_weak_labels(const PointCloud& cloud, double fraction, std::uint64_t seed);

struct SphereCrop {
  Vec3 center{};
  double radius = 0.0;
  std::vector<std::uint32_t> indices;  // into the parent cloud, ascending
  std::string scene_id;
};

// All points with ||p - center|| <= radius. Throws EmptyCropError when none.
SphereCrop ball_crop(const PointCloud& cloud, const Vec3& center, double radius = 2.0);
SphereCrop ball_crop(const PointCloud& cloud, const GridIndex& index, const Vec3& center,
                     double radius = 2.0);

PointCloud extract(const PointCloud& cloud, const SphereCrop& crop);

// Classes carried by weakly labeled points of the crop.
std::set<std::int32_t> labeled_classes(const PointCloud& cloud, const SphereCrop& crop);

bool share_labeled_class(const std::set<std::int32_t>& a, const std::set<std::int32_t>& b);

inline constexpr int kMaxPairRetries = 100;

// Draws two distinct crops uniformly from `crops` until their labeled-class
// sets intersect. Throws ConfigError after kMaxPairRetries failed draws.
std::pair<std::size_t, std::size_t> sample_pair(std::span<const std::set<std::int32_t>> crop_classes,
                                                std::uint64_t seed);

// Same rejection loop against a generator of fresh crops; `draw` receives the
// shared engine and returns a crop together with its labeled-class set.
template <class Crop>
using CropDraw = std::function<std::pair<Crop, std::set<std::int32_t>>(std::mt19937_64&)>;

template <class Crop>
std::pair<Crop, Crop> sample_pair(const CropDraw<Crop>& draw, std::mt19937_64& rng);

// Assigns every original point the prediction of its representative.
template <class T>
std::vector<T> back_project(std::span<const T> coarse_predictions, const SubsampleMap& map);

// ---- template definitions ----------------------------------------------------

[[noreturn]] void throw_pair_exhausted();

template <class Crop>
std::pair<Crop, Crop> sample_pair(const CropDraw<Crop>& draw, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < kMaxPairRetries; ++attempt) {
    auto a = draw(rng);
    auto b = draw(rng);
    if (share_labeled_class(a.second, b.second)) return {std::move(a.first), std::move(b.first)};
  }
  throw_pair_exhausted();
}

[[noreturn]] void throw_back_project_mismatch(std::size_t coarse, std::size_t expected);

template <class T>
std::vector<T> back_project(std::span<const T> coarse_predictions, const SubsampleMap& map) {
  if (coarse_predictions.size() != map.coarse_size())
    throw_back_project_mismatch(coarse_predictions.size(), map.coarse_size());
  std::vector<T> out;
  out.reserve(map.parent.size());
  for (auto p : map.parent) {
    if (p >= coarse_predictions.size()) throw_back_project_mismatch(p, coarse_predictions.size());
    out.push_back(coarse_predictions[p]);
  }
  return out;
}

}  // namespace dsprop
