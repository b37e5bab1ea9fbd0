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
#include <string>
#include <vector>

#include "dsprop/pointcloud.hpp"

namespace dsprop {

enum class PrimitiveKind { kFloor, kCeiling, kWalls, kBox, kCylinder, kWallPanel };

PrimitiveKind parse_primitive_kind(const std::string& s);
std::string to_string(PrimitiveKind kind);

// How one class is instantiated in a room.
struct ClassRecipe {
  std::string name;
  std::int32_t class_id = 0;
  PrimitiveKind kind = PrimitiveKind::kFloor;
  int min_count = 1, max_count = 1;  // instances; planes ignore this
  Vec3 min_size{1, 1, 1}, max_size{1, 1, 1};  // box: extents; cylinder: diameter, -, height
  Vec3 color{0.5, 0.5, 0.5};
};

struct SceneSpec {
  Vec3 room_min{5.0, 4.0, 2.8};
  Vec3 room_max{8.0, 7.0, 3.2};
  std::int32_t num_classes = 0;
  std::vector<ClassRecipe> classes;
  double density = 300.0;             // points per square metre of surface
  double color_jitter = 0.05;         // per-point stddev
  double instance_color_jitter = 0.08;  // per-instance uniform half-width
  double position_noise = 0.01;       // per-coordinate stddev, metres

  void validate() const;
  static SceneSpec default_indoor();
};

SceneSpec read_scene_spec(const std::string& path);

// A placed primitive. For cylinders size = {diameter, diameter, height}; for
// wall panels `center` lies on the panel face and `axis` names the wall normal
// (0 = x, 1 = y).
struct Primitive {
  PrimitiveKind kind;
  std::int32_t class_id;
  Vec3 center;
  Vec3 size;
  int axis = 0;
  Vec3 color;
};

struct SceneLayout {
  Vec3 room{};
  std::vector<Primitive> primitives;
};

struct GeneratedScene {
  PointCloud cloud;
  SceneLayout layout;
};

// Deterministic in (spec, seed). Labels are exact by construction and every
// class of the spec is instantiated at least once.
GeneratedScene generate_scene_with_layout(const SceneSpec& spec, std::uint64_t seed);
PointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Total sampled surface area of a primitive, used for point budgets.
double surface_area(const Primitive& p, const Vec3& room);

}  // namespace dsprop
