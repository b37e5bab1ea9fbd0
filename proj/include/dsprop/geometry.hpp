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

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace dsprop {

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline double squared_norm(const Vec3& a) { return a[0] * a[0] + a[1] * a[1] + a[2] * a[2]; }
double distance(const Vec3& a, const Vec3& b);

// Exact radius and nearest-neighbour queries over a fixed point set, backed by
// a uniform hash grid. Results are ordered by position (lexicographic x, y, z,
// then index) so downstream sums do not depend on input order.
class GridIndex {
 public:
  GridIndex(std::span<const Vec3> points, double cell);

  std::vector<std::uint32_t> radius_search(const Vec3& query, double radius) const;
  // Nearest point; ties go to the lexicographically smallest position.
  std::uint32_t nearest(const Vec3& query) const;

  std::size_t size() const noexcept { return points_.size(); }

 private:
  using Key = std::array<std::int64_t, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  Key key_of(const Vec3& p) const;

  std::vector<Vec3> points_;
  double cell_;
  Key lo_{}, hi_{};
  std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> buckets_;
};

// Strict weak order on (position, index) used for canonical ordering.
bool position_less(const Vec3& a, std::uint32_t ia, const Vec3& b, std::uint32_t ib);

}  // namespace dsprop
