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

#include "dsprop/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "dsprop/errors.hpp"

namespace dsprop {

void PointCloud::validate() const {
  const std::size_t n = positions.size();
  if (colors.size() != n || labels.size() != n || weak_mask.size() != n)
    throw FormatError("point cloud '" + scene_id + "': array lengths disagree");
  for (auto l : labels)
    if (l < 0 || l >= num_classes)
      throw FormatError("point cloud '" + scene_id + "': label " + std::to_string(l) +
                        " outside [0, " + std::to_string(num_classes) + ")");
}

void throw_pair_exhausted() {
  throw ConfigError("no crop pair with a common labeled class after " +
                    std::to_string(kMaxPairRetries) + " attempts");
}

void throw_back_project_mismatch(std::size_t coarse, std::size_t expected) {
  throw IndexError("back_project: coarse index/count " + std::to_string(coarse) +
                   " inconsistent with map size " + std::to_string(expected));
}

namespace {

using VoxelKey = std::array<std::int64_t, 3>;

std::map<VoxelKey, std::vector<std::uint32_t>> bucket(std::span<const Vec3> positions, double cell) {
  Vec3 lo = positions[0];
  for (const auto& p : positions)
    for (int d = 0; d < 3; ++d) lo[d] = std::min(lo[d], p[d]);
  std::map<VoxelKey, std::vector<std::uint32_t>> cells;
  for (std::uint32_t i = 0; i < positions.size(); ++i) {
    const auto& p = positions[i];
    VoxelKey k{static_cast<std::int64_t>(std::llround((p[0] - lo[0]) / cell)),
               static_cast<std::int64_t>(std::llround((p[1] - lo[1]) / cell)),
               static_cast<std::int64_t>(std::llround((p[2] - lo[2]) / cell))};
    cells[k].push_back(i);
  }
  for (auto& [key, members] : cells)
    std::sort(members.begin(), members.end(), [&](std::uint32_t a, std::uint32_t b) {
      return position_less(positions[a], a, positions[b], b);
    });
  return cells;
}

}  // namespace

SubsampleMap grid_subsample(std::span<const Vec3> positions, double cell) {
  if (!(cell > 0.0)) throw ConfigError("grid_subsample: cell must be positive");
  SubsampleMap map;
  if (positions.empty()) return map;
  map.parent.assign(positions.size(), 0);
  for (const auto& [key, members] : bucket(positions, cell)) {
    Vec3 c{0.0, 0.0, 0.0};
    for (auto i : members) {
      c = c + positions[i];
      map.parent[i] = static_cast<std::uint32_t>(map.coarse_positions.size());
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    map.coarse_positions.push_back({c[0] * inv, c[1] * inv, c[2] * inv});
  }
  return map;
}

SubsampledCloud subsample_cloud(const PointCloud& cloud, double cell) {
  if (!(cell > 0.0)) throw ConfigError("subsample_cloud: cell must be positive");
  SubsampledCloud out;
  out.cloud.scene_id = cloud.scene_id;
  out.cloud.num_classes = cloud.num_classes;
  if (cloud.size() == 0) return out;
  out.map.parent.assign(cloud.size(), 0);
  std::vector<int> votes(static_cast<std::size_t>(std::max(cloud.num_classes, 1)));
  for (const auto& [key, members] : bucket(cloud.positions, cell)) {
    Vec3 c{0.0, 0.0, 0.0}, col{0.0, 0.0, 0.0};
    std::fill(votes.begin(), votes.end(), 0);
    for (auto i : members) {
      c = c + cloud.positions[i];
      col = col + cloud.colors[i];
      ++votes[static_cast<std::size_t>(cloud.labels[i])];
      out.map.parent[i] = static_cast<std::uint32_t>(out.map.coarse_positions.size());
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    const Vec3 centroid{c[0] * inv, c[1] * inv, c[2] * inv};
    out.map.coarse_positions.push_back(centroid);
    out.cloud.positions.push_back(centroid);
    out.cloud.colors.push_back({col[0] * inv, col[1] * inv, col[2] * inv});
    out.cloud.labels.push_back(
        static_cast<std::int32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin()));
    out.cloud.weak_mask.push_back(0);
  }
  return out;
}

double cell_for_ratio(std::span<const Vec3> positions, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("cell_for_ratio: ratio must lie in (0, 1]");
  if (positions.empty()) throw ConfigError("cell_for_ratio: empty cloud");
  Vec3 lo = positions[0], hi = positions[0];
  for (const auto& p : positions)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  const double target = ratio * static_cast<double>(positions.size());
  double a = std::log(1e-6), b = std::log(std::max(distance(lo, hi), 1e-3) * 2.0);
  double best = std::exp(b), best_err = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (a + b);
    const double cell = std::exp(mid);
    const double count = static_cast<double>(bucket(positions, cell).size());
    if (std::abs(count - target) < best_err) {
      best_err = std::abs(count - target);
      best = cell;
    }
    if (count > target)
      a = mid;
    else
      b = mid;
  }
  return best;
}

PointCloud sample_weak_labels(const PointCloud& cloud, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("sample_weak_labels: fraction " + std::to_string(fraction) +
                      " outside (0, 1]");
  PointCloud out = cloud;
  out.weak_mask.assign(cloud.size(), 0);
  std::vector<std::vector<std::uint32_t>> by_class(static_cast<std::size_t>(cloud.num_classes));
  for (std::uint32_t i = 0; i < cloud.size(); ++i)
    by_class.at(static_cast<std::size_t>(cloud.labels[i])).push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    // The epsilon keeps products such as 0.07 * 100 from rounding up a step.
    const auto want = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < std::min(want, members.size()); ++k) out.weak_mask[members[k]] = 1;
  }
  return out;
}

SphereCrop ball_crop(const PointCloud& cloud, const Vec3& center, double radius) {
  if (!(radius > 0.0)) throw ConfigError("ball_crop: radius must be positive");
  SphereCrop crop{center, radius, {}, cloud.scene_id};
  const double r2 = radius * radius;
  for (std::uint32_t i = 0; i < cloud.size(); ++i)
    if (squared_norm(cloud.positions[i] - center) <= r2) crop.indices.push_back(i);
  if (crop.indices.empty()) throw EmptyCropError("ball_crop: no point within radius");
  return crop;
}

SphereCrop ball_crop(const PointCloud& cloud, const GridIndex& index, const Vec3& center,
                     double radius) {
  if (!(radius > 0.0)) throw ConfigError("ball_crop: radius must be positive");
  if (index.size() != cloud.size()) throw IndexError("ball_crop: index built on another cloud");
  SphereCrop crop{center, radius, index.radius_search(center, radius), cloud.scene_id};
  std::sort(crop.indices.begin(), crop.indices.end());
  if (crop.indices.empty()) throw EmptyCropError("ball_crop: no point within radius");
  return crop;
}

PointCloud extract(const PointCloud& cloud, const SphereCrop& crop) {
  PointCloud out;
  out.scene_id = cloud.scene_id;
  out.num_classes = cloud.num_classes;
  for (auto i : crop.indices) {
    if (i >= cloud.size()) throw IndexError("extract: crop index " + std::to_string(i) + " out of range");
    out.positions.push_back(cloud.positions[i]);
    out.colors.push_back(cloud.colors[i]);
    out.labels.push_back(cloud.labels[i]);
    out.weak_mask.push_back(cloud.weak_mask[i]);
  }
  return out;
}

std::set<std::int32_t> labeled_classes(const PointCloud& cloud, const SphereCrop& crop) {
  std::set<std::int32_t> out;
  for (auto i : crop.indices)
    if (cloud.weak_mask[i]) out.insert(cloud.labels[i]);
  return out;
}

bool share_labeled_class(const std::set<std::int32_t>& a, const std::set<std::int32_t>& b) {
  for (auto c : a)
    if (b.count(c)) return true;
  return false;
}

std::pair<std::size_t, std::size_t> sample_pair(std::span<const std::set<std::int32_t>> crop_classes,
                                                std::uint64_t seed) {
  if (crop_classes.size() < 2) throw ConfigError("sample_pair: need at least two crops");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> first(0, crop_classes.size() - 1);
  std::uniform_int_distribution<std::size_t> second(0, crop_classes.size() - 2);
  for (int attempt = 0; attempt < kMaxPairRetries; ++attempt) {
    const std::size_t a = first(rng);
    std::size_t b = second(rng);
    if (b >= a) ++b;
    if (share_labeled_class(crop_classes[a], crop_classes[b])) return {a, b};
  }
  throw_pair_exhausted();
}

}  // namespace dsprop
