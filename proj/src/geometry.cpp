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

#include "dsprop/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsprop/errors.hpp"

namespace dsprop {

double distance(const Vec3& a, const Vec3& b) { return std::sqrt(squared_norm(a - b)); }

bool position_less(const Vec3& a, std::uint32_t ia, const Vec3& b, std::uint32_t ib) {
  if (a != b) return a < b;
  return ia < ib;
}

std::size_t GridIndex::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto v : k) {
    h ^= static_cast<std::uint64_t>(v);
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h);
}

GridIndex::GridIndex(std::span<const Vec3> points, double cell)
    : points_(points.begin(), points.end()), cell_(cell) {
  if (!(cell > 0.0)) throw ConfigError("grid index cell must be positive");
  lo_ = {std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
         std::numeric_limits<std::int64_t>::max()};
  hi_ = {std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::min(),
         std::numeric_limits<std::int64_t>::min()};
  for (std::uint32_t i = 0; i < points_.size(); ++i) {
    const Key k = key_of(points_[i]);
    buckets_[k].push_back(i);
    for (int d = 0; d < 3; ++d) {
      lo_[d] = std::min(lo_[d], k[d]);
      hi_[d] = std::max(hi_[d], k[d]);
    }
  }
}

GridIndex::Key GridIndex::key_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell_)),
          static_cast<std::int64_t>(std::floor(p[1] / cell_)),
          static_cast<std::int64_t>(std::floor(p[2] / cell_))};
}

std::vector<std::uint32_t> GridIndex::radius_search(const Vec3& query, double radius) const {
  std::vector<std::uint32_t> out;
  if (points_.empty()) return out;
  const double r2 = radius * radius;
  const Vec3 lo{query[0] - radius, query[1] - radius, query[2] - radius};
  const Vec3 hi{query[0] + radius, query[1] + radius, query[2] + radius};
  Key a = key_of(lo), b = key_of(hi);
  for (int d = 0; d < 3; ++d) {
    a[d] = std::max(a[d], lo_[d]);
    b[d] = std::min(b[d], hi_[d]);
  }
  for (auto x = a[0]; x <= b[0]; ++x)
    for (auto y = a[1]; y <= b[1]; ++y)
      for (auto z = a[2]; z <= b[2]; ++z) {
        auto it = buckets_.find(Key{x, y, z});
        if (it == buckets_.end()) continue;
        for (auto i : it->second)
          if (squared_norm(points_[i] - query) <= r2) out.push_back(i);
      }
  std::sort(out.begin(), out.end(), [this](std::uint32_t i, std::uint32_t j) {
    return position_less(points_[i], i, points_[j], j);
  });
  return out;
}

std::uint32_t GridIndex::nearest(const Vec3& query) const {
  if (points_.empty()) throw IndexError("nearest on an empty index");
  const Key c = key_of(query);
  std::uint32_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  bool found = false;
  auto consider = [&](std::uint32_t i) {
    const double d2 = squared_norm(points_[i] - query);
    if (!found || d2 < best_d2 || (d2 == best_d2 && position_less(points_[i], i, points_[best], best))) {
      best = i;
      best_d2 = d2;
      found = true;
    }
  };
  std::int64_t max_ring = 0;
  for (int d = 0; d < 3; ++d)
    max_ring = std::max({max_ring, std::abs(c[d] - lo_[d]), std::abs(c[d] - hi_[d])});
  for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
    for (auto x = c[0] - ring; x <= c[0] + ring; ++x)
      for (auto y = c[1] - ring; y <= c[1] + ring; ++y)
        for (auto z = c[2] - ring; z <= c[2] + ring; ++z) {
          if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != ring) continue;
          auto it = buckets_.find(Key{x, y, z});
          if (it == buckets_.end()) continue;
          for (auto i : it->second) consider(i);
        }
    // Every unvisited cell is at least ring * cell away from the query.
    if (found && std::sqrt(best_d2) <= static_cast<double>(ring) * cell_) break;
  }
  return best;
}

}  // namespace dsprop
