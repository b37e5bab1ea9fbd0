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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dsprop/autograd.hpp"
#include "dsprop/geometry.hpp"
#include "dsprop/pointcloud.hpp"

namespace dsprop {

struct BackboneConfig {
  int levels = 3;
  double first_cell = 0.3;  // spacing of level 0; level l uses first_cell * 2^l
  std::vector<int> widths = {16, 32, 64};
  int hook_width = 32;
  int decoder_width = 32;
  int kernel_points = 7;        // 1, 7 or 15
  double conv_radius = 2.5;     // in units of the level cell
  double kernel_extent = 1.2;   // influence radius sigma, in units of the level cell
  double negative_slope = 0.1;
  std::size_t hook_cap = 1024;
  int in_features = 4;  // constant 1 followed by RGB
  int num_classes = 7;
  bool bottleneck = true;
  bool skip_connections = true;
  bool normalize_influence = true;  // per-kernel-point weighted mean instead of a raw sum
  bool linear = false;  // identity activations; used to check linearity
  std::uint64_t init_seed = 1;

  int hook_level() const { return levels - 2; }
  double cell(int level) const;
  void validate() const;
};

// Fixed kernel point offsets: the centre, then +-x/+-y/+-z, then the eight
// cube diagonals, all at distance `extent` (1, 7 or 15 points).
std::vector<Vec3> kernel_offsets(int count, double extent);

// Precomputed correlation entries of one kernel-point convolution.
struct KernelGeometry {
  struct Entry {
    std::uint32_t query;
    std::uint32_t source;
    std::uint32_t kernel;
    double influence;
  };
  std::size_t num_queries = 0;
  std::size_t num_sources = 0;
  std::size_t num_kernels = 0;
  std::vector<Entry> entries;  // grouped by query, neighbours in position order
};

// influence(n, k) = h(n, k) with
// h(n, k) = max(0, 1 - ||p_n - (q + kernel_k)|| / sigma), for every listed
// neighbour n of every query q. With `normalize`, h(n, k) / sum_{n'} h(n', k)
// instead, so each active kernel point sees a weighted mean.
KernelGeometry build_kernel_geometry(std::span<const Vec3> queries, std::span<const Vec3> sources,
                                     std::span<const std::vector<std::uint32_t>> neighbors,
                                     std::span<const Vec3> offsets, double sigma, bool normalize = true);

// Same, with neighbours found by exact radius search.
KernelGeometry build_kernel_geometry(std::span<const Vec3> queries, std::span<const Vec3> sources,
                                     double radius, std::span<const Vec3> offsets, double sigma,
                                     bool normalize = true);

// G[q, k*Kin + c] = sum_n influence(q, n, k) * f[n, c].
Var kernel_aggregate(Var features, const KernelGeometry& geometry);

// out(q) = sum_n sum_k influence(q, n, k) * (f_n W_k); weights are [K x Kin x Kout].
Var kp_conv(Var features, const KernelGeometry& geometry, Var weights);

struct FeatureMap {
  std::vector<Vec3> positions;
  Var features;
  int level = 0;
};

// Positions, neighbourhoods and upsampling indices of one crop. Depends only
// on geometry, so it is built once and reused by every forward pass.
struct CropGeometry {
  struct Level {
    std::vector<Vec3> positions;
    KernelGeometry strided;  // level-1 -> level (unused at level 0)
    KernelGeometry conv;     // level -> level
    std::vector<std::uint32_t> from_coarser;  // nearest point at level+1 (unused at the last level)
  };
  std::vector<Level> levels;
  // Hook-level rows kept after capping (identity when under the cap), and
  // the nearest-neighbour indices used to leave the capped hook.
  std::vector<std::uint32_t> hook_subset;
  std::vector<Vec3> hook_positions;
  std::vector<std::uint32_t> from_hook;  // points of the next finer level (or level 0 itself) -> hook row

  std::size_t num_points() const { return levels.front().positions.size(); }
};

CropGeometry build_crop_geometry(std::span<const Vec3> positions, const BackboneConfig& config,
                                 std::uint64_t cap_seed);

// Everything a forward pass needs for one crop.
struct CropSample {
  CropGeometry geometry;
  Tensor features;  // N x in_features
  Tensor one_hot;   // N x C, zero rows where unlabeled
  Tensor mask;      // N, 1 on weakly labeled points
  std::vector<std::int32_t> labels;
  std::size_t num_labeled = 0;
};

// Input features are [1, r, g, b]; only weakly labeled points carry targets.
CropSample prepare_crop(const PointCloud& crop, const BackboneConfig& config, std::uint64_t cap_seed);

class Backbone {
 public:
  explicit Backbone(BackboneConfig config);

  const BackboneConfig& config() const noexcept { return config_; }

  std::map<std::string, Parameter>& parameters() noexcept { return params_; }
  const std::map<std::string, Parameter>& parameters() const noexcept { return params_; }
  std::vector<Parameter*> parameter_list();
  Parameter& param(const std::string& name);

  // One feature map per encoder level, finest first.
  std::vector<FeatureMap> encode(Tape& tape, const CropGeometry& geometry, Var input);
  // Nearest upsampling of the deepest map, skip concatenation and a unary
  // layer: the hook features, capped to geometry.hook_subset.
  FeatureMap decode_to_hook(Tape& tape, const CropGeometry& geometry,
                            const std::vector<FeatureMap>& encoded);
  // Remaining upsampling/unary layers and the classifier. Stateless, so the
  // same weights serve the original and the reallocated branches.
  Var decode_from_hook(Tape& tape, const CropGeometry& geometry, const FeatureMap& hook,
                       const std::vector<FeatureMap>& encoded);

  // encode + decode_to_hook.
  struct Forward {
    std::vector<FeatureMap> encoded;
    FeatureMap hook;
  };
  Forward forward_to_hook(Tape& tape, const CropGeometry& geometry, Var input);
  Var logits(Tape& tape, const CropGeometry& geometry, Var input);

 private:
  Var activate(Var x) const;
  Var bind(Tape& tape, const std::string& name);

  BackboneConfig config_;
  std::map<std::string, Parameter> params_;
};

}  // namespace dsprop
