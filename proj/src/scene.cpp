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

#include "dsprop/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dsprop/errors.hpp"

namespace dsprop {

PrimitiveKind parse_primitive_kind(const std::string& s) {
  if (s == "floor") return PrimitiveKind::kFloor;
  if (s == "ceiling") return PrimitiveKind::kCeiling;
  if (s == "walls") return PrimitiveKind::kWalls;
  if (s == "box") return PrimitiveKind::kBox;
  if (s == "cylinder") return PrimitiveKind::kCylinder;
  if (s == "wall_panel") return PrimitiveKind::kWallPanel;
  throw ConfigError("unknown primitive kind '" + s + "'");
}

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kFloor: return "floor";
    case PrimitiveKind::kCeiling: return "ceiling";
    case PrimitiveKind::kWalls: return "walls";
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kCylinder: return "cylinder";
    case PrimitiveKind::kWallPanel: return "wall_panel";
  }
  return "?";
}

void SceneSpec::validate() const {
  if (num_classes < 1) throw ConfigError("scene spec: num_classes must be >= 1");
  if (!(density > 0.0)) throw ConfigError("scene spec: density must be positive");
  if (color_jitter < 0.0 || instance_color_jitter < 0.0 || position_noise < 0.0)
    throw ConfigError("scene spec: noise levels must be non-negative");
  for (int d = 0; d < 3; ++d)
    if (!(room_min[d] > 0.0) || room_max[d] < room_min[d])
      throw ConfigError("scene spec: invalid room extents");
  std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
  for (const auto& r : classes) {
    if (r.class_id < 0 || r.class_id >= num_classes)
      throw ConfigError("scene spec: class id " + std::to_string(r.class_id) + " out of range");
    if (r.min_count < 1 || r.max_count < r.min_count)
      throw ConfigError("scene spec: class '" + r.name + "' needs 1 <= min_count <= max_count");
    for (int d = 0; d < 3; ++d)
      if (r.max_size[d] < r.min_size[d])
        throw ConfigError("scene spec: class '" + r.name + "' has max_size < min_size");
    ++seen[static_cast<std::size_t>(r.class_id)];
  }
  for (int c = 0; c < num_classes; ++c)
    if (!seen[static_cast<std::size_t>(c)])
      throw ConfigError("scene spec: class " + std::to_string(c) + " has no recipe");
}

SceneSpec SceneSpec::default_indoor() {
  SceneSpec s;
  s.num_classes = 7;
  auto add = [&](std::string name, int id, PrimitiveKind kind, int lo, int hi, Vec3 smin,
                 Vec3 smax, Vec3 color) {
    s.classes.push_back({std::move(name), id, kind, lo, hi, smin, smax, color});
  };
  add("floor", 0, PrimitiveKind::kFloor, 1, 1, {1, 1, 1}, {1, 1, 1}, {0.55, 0.47, 0.38});
  add("ceiling", 1, PrimitiveKind::kCeiling, 1, 1, {1, 1, 1}, {1, 1, 1}, {0.82, 0.82, 0.78});
  add("wall", 2, PrimitiveKind::kWalls, 1, 1, {1, 1, 1}, {1, 1, 1}, {0.74, 0.70, 0.62});
  add("table", 3, PrimitiveKind::kBox, 1, 2, {1.2, 0.7, 0.70}, {1.8, 1.0, 0.80}, {0.52, 0.38, 0.24});
  add("chair", 4, PrimitiveKind::kBox, 2, 4, {0.45, 0.45, 0.45}, {0.55, 0.55, 0.95}, {0.45, 0.36, 0.30});
  add("column", 5, PrimitiveKind::kCylinder, 1, 2, {0.35, 0.35, 0.0}, {0.6, 0.6, 0.0}, {0.76, 0.74, 0.68});
  add("board", 6, PrimitiveKind::kWallPanel, 1, 2, {1.2, 0.0, 0.8}, {2.0, 0.0, 1.2}, {0.86, 0.86, 0.84});
  return s;
}

namespace {

Vec3 parse_vec3(const std::string& s, const std::string& key) {
  std::istringstream is(s);
  Vec3 v{};
  if (!(is >> v[0] >> v[1] >> v[2])) throw ConfigError("scene spec: '" + key + "' needs three numbers");
  return v;
}

}  // namespace

SceneSpec read_scene_spec(const std::string& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("scene spec: " + std::string(e.what()));
  }
  SceneSpec s;
  try {
    const auto& scene = tree.get_child("scene");
    s.num_classes = scene.get<int>("num_classes");
    s.room_min = parse_vec3(scene.get<std::string>("room_min", "5 4 2.8"), "room_min");
    s.room_max = parse_vec3(scene.get<std::string>("room_max", "8 7 3.2"), "room_max");
    s.density = scene.get<double>("density", s.density);
    s.color_jitter = scene.get<double>("color_jitter", s.color_jitter);
    s.instance_color_jitter = scene.get<double>("instance_color_jitter", s.instance_color_jitter);
    s.position_noise = scene.get<double>("position_noise", s.position_noise);
    for (const auto& [section, body] : tree) {
      if (section.rfind("class.", 0) != 0) continue;
      ClassRecipe r;
      r.name = section.substr(6);
      r.class_id = body.get<int>("id");
      r.kind = parse_primitive_kind(body.get<std::string>("kind"));
      std::istringstream counts(body.get<std::string>("count", "1 1"));
      if (!(counts >> r.min_count >> r.max_count))
        throw ConfigError("scene spec: class '" + r.name + "' count needs two integers");
      r.min_size = parse_vec3(body.get<std::string>("min_size", "1 1 1"), "min_size");
      r.max_size = parse_vec3(body.get<std::string>("max_size", "1 1 1"), "max_size");
      r.color = parse_vec3(body.get<std::string>("color", "0.5 0.5 0.5"), "color");
      s.classes.push_back(r);
    }
  } catch (const pt::ptree_error& e) {
    throw ConfigError("scene spec: " + std::string(e.what()));
  }
  s.validate();
  return s;
}

double surface_area(const Primitive& p, const Vec3& room) {
  const double pi = std::numbers::pi;
  switch (p.kind) {
    case PrimitiveKind::kFloor:
    case PrimitiveKind::kCeiling: return room[0] * room[1];
    case PrimitiveKind::kWalls: return 2.0 * (room[0] + room[1]) * room[2];
    case PrimitiveKind::kBox:
      return p.size[0] * p.size[1] + 2.0 * (p.size[0] + p.size[1]) * p.size[2];
    case PrimitiveKind::kCylinder: {
      const double r = 0.5 * p.size[0];
      return 2.0 * pi * r * p.size[2] + pi * r * r;
    }
    case PrimitiveKind::kWallPanel: return p.size[0] * p.size[2];
  }
  return 0.0;
}

namespace {

class Sampler {
 public:
  Sampler(const SceneSpec& spec, std::mt19937_64& rng, PointCloud& out)
      : spec_(spec), rng_(rng), out_(out) {}

  // Uniform samples on the parallelogram origin + s*u + t*v.
  void rect(const Vec3& origin, const Vec3& u, const Vec3& v, double area, const Primitive& p) {
    const auto n = count(area);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double s = unit(rng_), t = unit(rng_);
      emit({origin[0] + s * u[0] + t * v[0], origin[1] + s * u[1] + t * v[1],
            origin[2] + s * u[2] + t * v[2]},
           p);
    }
  }

  void cylinder(const Primitive& p) {
    const double pi = std::numbers::pi;
    const double r = 0.5 * p.size[0], h = p.size[2];
    const Vec3 base{p.center[0], p.center[1], p.center[2] - 0.5 * h};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto lateral = count(2.0 * pi * r * h);
    for (std::size_t k = 0; k < lateral; ++k) {
      const double th = 2.0 * pi * unit(rng_), z = h * unit(rng_);
      emit({base[0] + r * std::cos(th), base[1] + r * std::sin(th), base[2] + z}, p);
    }
    const auto top = count(pi * r * r);
    for (std::size_t k = 0; k < top; ++k) {
      const double th = 2.0 * pi * unit(rng_), rr = r * std::sqrt(unit(rng_));
      emit({base[0] + rr * std::cos(th), base[1] + rr * std::sin(th), base[2] + h}, p);
    }
  }

 private:
  std::size_t count(double area) const {
    return static_cast<std::size_t>(std::llround(area * spec_.density));
  }

  void emit(const Vec3& pos, const Primitive& p) {
    std::normal_distribution<double> pos_noise(0.0, spec_.position_noise);
    std::normal_distribution<double> col_noise(0.0, spec_.color_jitter);
    Vec3 q = pos, c = p.color;
    for (int d = 0; d < 3; ++d) {
      if (spec_.position_noise > 0.0) q[d] += pos_noise(rng_);
      if (spec_.color_jitter > 0.0) c[d] += col_noise(rng_);
      c[d] = std::clamp(c[d], 0.0, 1.0);
    }
    out_.positions.push_back(q);
    out_.colors.push_back(c);
    out_.labels.push_back(p.class_id);
    out_.weak_mask.push_back(0);
  }

  const SceneSpec& spec_;
  std::mt19937_64& rng_;
  PointCloud& out_;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

GeneratedScene generate_scene_with_layout(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  GeneratedScene g;
  auto& room = g.layout.room;
  for (int d = 0; d < 3; ++d) room[d] = uniform(rng, spec.room_min[d], spec.room_max[d]);
  const double X = room[0], Y = room[1], H = room[2];
  const double margin = 0.1;

  for (const auto& r : spec.classes) {
    const int instances =
        (r.kind == PrimitiveKind::kFloor || r.kind == PrimitiveKind::kCeiling ||
         r.kind == PrimitiveKind::kWalls)
            ? 1
            : std::uniform_int_distribution<int>(r.min_count, r.max_count)(rng);
    for (int k = 0; k < instances; ++k) {
      Primitive p{r.kind, r.class_id, {}, {}, 0, r.color};
      for (int d = 0; d < 3; ++d)
        p.color[d] = std::clamp(
            p.color[d] + uniform(rng, -spec.instance_color_jitter, spec.instance_color_jitter), 0.0, 1.0);
      Vec3 size{};
      for (int d = 0; d < 3; ++d) size[d] = uniform(rng, r.min_size[d], r.max_size[d]);
      switch (r.kind) {
        case PrimitiveKind::kFloor: p.center = {X / 2, Y / 2, 0.0}; p.size = {X, Y, 0.0}; break;
        case PrimitiveKind::kCeiling: p.center = {X / 2, Y / 2, H}; p.size = {X, Y, 0.0}; break;
        case PrimitiveKind::kWalls: p.center = {X / 2, Y / 2, H / 2}; p.size = {X, Y, H}; break;
        case PrimitiveKind::kBox: {
          size[0] = std::min(size[0], X - 2 * margin);
          size[1] = std::min(size[1], Y - 2 * margin);
          size[2] = size[2] > 0.0 ? std::min(size[2], H) : H;
          p.size = size;
          p.center = {uniform(rng, margin + size[0] / 2, X - margin - size[0] / 2),
                      uniform(rng, margin + size[1] / 2, Y - margin - size[1] / 2), size[2] / 2};
          break;
        }
        case PrimitiveKind::kCylinder: {
          const double dia = std::min({size[0], X - 2 * margin, Y - 2 * margin});
          const double h = size[2] > 0.0 ? std::min(size[2], H) : H;
          p.size = {dia, dia, h};
          p.center = {uniform(rng, margin + dia / 2, X - margin - dia / 2),
                      uniform(rng, margin + dia / 2, Y - margin - dia / 2), h / 2};
          break;
        }
        case PrimitiveKind::kWallPanel: {
          const int wall = std::uniform_int_distribution<int>(0, 3)(rng);
          p.axis = wall < 2 ? 0 : 1;
          const double span = p.axis == 0 ? Y : X;
          const double w = std::min(size[0], span - 2 * margin);
          const double h = std::min(size[2], H - 0.4);
          p.size = {w, 0.0, h};
          const double along = uniform(rng, margin + w / 2, span - margin - w / 2);
          const double zc = uniform(rng, 0.8 + h / 2, std::max(0.8 + h / 2, H - 0.2 - h / 2));
          const double inset = 0.03;
          if (p.axis == 0)
            p.center = {wall == 0 ? inset : X - inset, along, zc};
          else
            p.center = {along, wall == 2 ? inset : Y - inset, zc};
          break;
        }
      }
      g.layout.primitives.push_back(p);
    }
  }

  auto& cloud = g.cloud;
  cloud.num_classes = spec.num_classes;
  cloud.scene_id = "scene-" + std::to_string(seed);
  Sampler sampler(spec, rng, cloud);
  for (const auto& p : g.layout.primitives) {
    const auto& c = p.center;
    const auto& s = p.size;
    switch (p.kind) {
      case PrimitiveKind::kFloor:
        sampler.rect({0, 0, 0}, {X, 0, 0}, {0, Y, 0}, X * Y, p);
        break;
      case PrimitiveKind::kCeiling:
        sampler.rect({0, 0, H}, {X, 0, 0}, {0, Y, 0}, X * Y, p);
        break;
      case PrimitiveKind::kWalls:
        sampler.rect({0, 0, 0}, {0, Y, 0}, {0, 0, H}, Y * H, p);
        sampler.rect({X, 0, 0}, {0, Y, 0}, {0, 0, H}, Y * H, p);
        sampler.rect({0, 0, 0}, {X, 0, 0}, {0, 0, H}, X * H, p);
        sampler.rect({0, Y, 0}, {X, 0, 0}, {0, 0, H}, X * H, p);
        break;
      case PrimitiveKind::kBox: {
        const Vec3 lo{c[0] - s[0] / 2, c[1] - s[1] / 2, 0.0};
        sampler.rect({lo[0], lo[1], s[2]}, {s[0], 0, 0}, {0, s[1], 0}, s[0] * s[1], p);
        sampler.rect(lo, {0, s[1], 0}, {0, 0, s[2]}, s[1] * s[2], p);
        sampler.rect({lo[0] + s[0], lo[1], 0}, {0, s[1], 0}, {0, 0, s[2]}, s[1] * s[2], p);
        sampler.rect(lo, {s[0], 0, 0}, {0, 0, s[2]}, s[0] * s[2], p);
        sampler.rect({lo[0], lo[1] + s[1], 0}, {s[0], 0, 0}, {0, 0, s[2]}, s[0] * s[2], p);
        break;
      }
      case PrimitiveKind::kCylinder: sampler.cylinder(p); break;
      case PrimitiveKind::kWallPanel: {
        const double w = s[0], h = s[2];
        if (p.axis == 0)
          sampler.rect({c[0], c[1] - w / 2, c[2] - h / 2}, {0, w, 0}, {0, 0, h}, w * h, p);
        else
          sampler.rect({c[0] - w / 2, c[1], c[2] - h / 2}, {w, 0, 0}, {0, 0, h}, w * h, p);
        break;
      }
    }
  }
  if (cloud.size() == 0) throw ConfigError("scene spec produced an empty scene");
  return g;
}

PointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  return generate_scene_with_layout(spec, seed).cloud;
}

}  // namespace dsprop
