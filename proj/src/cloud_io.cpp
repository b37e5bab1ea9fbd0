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

#include "dsprop/cloud_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "dsprop/errors.hpp"

namespace dsprop {

namespace {

constexpr char kCloudMagic[4] = {'D', 'S', 'P', 'C'};

}  // namespace

std::string encode_cloud(const PointCloud& cloud) {
  cloud.validate();
  Writer w;
  w.bytes(kCloudMagic, 4);
  w.uint<std::uint32_t>(kCloudFormatVersion);
  w.uint<std::uint64_t>(cloud.size());
  w.i32(cloud.num_classes);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(cloud.scene_id.size()));
  w.bytes(cloud.scene_id.data(), cloud.scene_id.size());
  for (const auto& p : cloud.positions)
    for (double v : p) w.f64(v);
  for (const auto& c : cloud.colors)
    for (double v : c) w.f64(v);
  for (auto l : cloud.labels) w.i32(l);
  for (auto m : cloud.weak_mask) w.uint<std::uint8_t>(m);
  return w.take();
}

PointCloud decode_cloud(std::string_view bytes) {
  Reader r(bytes, "cloud file");
  if (r.take(4) != std::string_view(kCloudMagic, 4)) throw FormatError("not a cloud file (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCloudFormatVersion)
    throw FormatError("unsupported cloud format version " + std::to_string(version));
  const auto n = r.uint<std::uint64_t>();
  PointCloud c;
  c.num_classes = r.i32();
  const auto id_len = r.uint<std::uint32_t>();
  c.scene_id = std::string(r.take(id_len));
  // 53 bytes per point; reject absurd counts before allocating.
  r.need(static_cast<std::size_t>(n) * 53);
  c.positions.resize(n);
  c.colors.resize(n);
  c.labels.resize(n);
  c.weak_mask.resize(n);
  for (auto& p : c.positions)
    for (double& v : p) v = r.f64();
  for (auto& col : c.colors)
    for (double& v : col) v = r.f64();
  for (auto& l : c.labels) l = r.i32();
  for (auto& m : c.weak_mask) m = r.uint<std::uint8_t>();
  if (!r.done()) throw FormatError("trailing bytes after cloud payload");
  c.validate();
  return c;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  write_file_atomic(path, encode_cloud(cloud));
}

PointCloud read_cloud(const std::filesystem::path& path) { return decode_cloud(read_file(path)); }

void export_ply(std::span<const Vec3> positions, std::span<const Vec3> colors,
                const std::filesystem::path& path) {
  if (positions.size() != colors.size()) throw DimensionError("export_ply: positions/colors length mismatch");
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << positions.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  os << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& p = positions[i];
    os << p[0] << ' ' << p[1] << ' ' << p[2];
    for (double c : colors[i])
      os << ' ' << static_cast<int>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

void export_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  export_ply(cloud.positions, cloud.colors, path);
}

std::array<std::uint8_t, 3> affinity_color(double value, double lo, double hi) {
  const double t = hi > lo ? std::clamp((value - lo) / (hi - lo), 0.0, 1.0) : 1.0;
  return {static_cast<std::uint8_t>(std::lround(255.0 * t)), 0,
          static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t)))};
}

void export_affinity_ply(std::span<const Vec3> positions, std::span<const double> affinity,
                         const std::filesystem::path& path) {
  if (positions.size() != affinity.size() || affinity.empty())
    throw DimensionError("export_affinity_ply: positions/affinity length mismatch");
  const auto [lo, hi] = std::minmax_element(affinity.begin(), affinity.end());
  std::vector<Vec3> colors;
  colors.reserve(affinity.size());
  for (double a : affinity) {
    const auto rgb = affinity_color(a, *lo, *hi);
    colors.push_back({rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0});
  }
  export_ply(positions, colors, path);
}

std::vector<const ManifestEntry*> Manifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : scenes)
    if (e.split == name) out.push_back(&e);
  return out;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "dsprop-manifest";
  j["version"] = 1;
  j["num_classes"] = manifest.num_classes;
  j["class_names"] = manifest.class_names;
  j["scenes"] = nlohmann::json::array();
  for (const auto& e : manifest.scenes)
    j["scenes"].push_back({{"id", e.id}, {"file", e.file}, {"split", e.split}, {"seed", e.seed}});
  write_file_atomic(path, j.dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& path) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    if (j.at("format") != "dsprop-manifest") throw FormatError("not a dsprop manifest");
    if (j.at("version") != 1) throw FormatError("unsupported manifest version");
    m.num_classes = j.at("num_classes").get<std::int32_t>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    for (const auto& s : j.at("scenes"))
      m.scenes.push_back({s.at("id").get<std::string>(), s.at("file").get<std::string>(),
                          s.at("split").get<std::string>(), s.value("seed", std::uint64_t{0})});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  return m;
}

}  // namespace dsprop
