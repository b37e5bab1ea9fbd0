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
#include <span>
#include <string>
#include <vector>

#include "dsprop/pointcloud.hpp"

namespace dsprop {

// Binary cloud container, little-endian:
//   "DSPC" | u32 version | u64 N | i32 C | u32 id_len | id bytes
//   | f64 positions[N*3] | f64 colors[N*3] | i32 labels[N] | u8 mask[N]
inline constexpr std::uint32_t kCloudFormatVersion = 1;

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path);

std::string encode_cloud(const PointCloud& cloud);
PointCloud decode_cloud(std::string_view bytes);

// ASCII PLY with float x,y,z and uchar red,green,blue.
void export_ply(std::span<const Vec3> positions, std::span<const Vec3> colors,
                const std::filesystem::path& path);
void export_ply(const PointCloud& cloud, const std::filesystem::path& path);

// Blue-to-red ramp over the affinity range: the maximum maps to (255, 0, 0).
std::array<std::uint8_t, 3> affinity_color(double value, double lo, double hi);
void export_affinity_ply(std::span<const Vec3> positions, std::span<const double> affinity,
                         const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string file;  // relative to the manifest directory
  std::string split;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::int32_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> scenes;
  std::filesystem::path root;  // directory holding the manifest (not serialized)

  std::vector<const ManifestEntry*> split(const std::string& name) const;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace dsprop
