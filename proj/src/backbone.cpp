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

#include "dsprop/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "dsprop/errors.hpp"

namespace dsprop {

double BackboneConfig::cell(int level) const { return first_cell * std::ldexp(1.0, level); }

void BackboneConfig::validate() const {
  if (levels < 1) throw ConfigError("backbone: levels must be >= 1");
  if (static_cast<int>(widths.size()) != levels)
    throw ConfigError("backbone: need one width per level (" + std::to_string(levels) + ")");
  for (int w : widths)
    if (w < 2) throw ConfigError("backbone: widths must be >= 2");
  if (hook_width < 1 || decoder_width < 1) throw ConfigError("backbone: decoder widths must be positive");
  if (kernel_points != 1 && kernel_points != 7 && kernel_points != 15)
    throw ConfigError("backbone: kernel_points must be 1, 7 or 15");
  if (!(first_cell > 0.0) || !(conv_radius > 0.0) || !(kernel_extent > 0.0))
    throw ConfigError("backbone: cell, radius and extent must be positive");
  if (kernel_extent > conv_radius)
    throw ConfigError("backbone: kernel points must lie within the convolution radius");
  if (hook_cap < 1) throw ConfigError("backbone: hook_cap must be positive");
  if (in_features < 1 || num_classes < 1) throw ConfigError("backbone: bad feature/class counts");
}

std::vector<Vec3> kernel_offsets(int count, double extent) {
  std::vector<Vec3> k{{0.0, 0.0, 0.0}};
  if (count >= 7)
    for (int d = 0; d < 3; ++d)
      for (double s : {1.0, -1.0}) {
        Vec3 v{0.0, 0.0, 0.0};
        v[d] = s * extent;
        k.push_back(v);
      }
  if (count >= 15) {
    const double e = extent / std::sqrt(3.0);
    for (double x : {1.0, -1.0})
      for (double y : {1.0, -1.0})
        for (double z : {1.0, -1.0}) k.push_back({x * e, y * e, z * e});
  }
  return k;
}

KernelGeometry build_kernel_geometry(std::span<const Vec3> queries, std::span<const Vec3> sources,
                                     std::span<const std::vector<std::uint32_t>> neighbors,
                                     std::span<const Vec3> offsets, double sigma, bool normalize) {
  if (neighbors.size() != queries.size())
    throw DimensionError("kernel geometry: one neighbour list per query required");
  KernelGeometry g;
  g.num_queries = queries.size();
  g.num_sources = sources.size();
  g.num_kernels = offsets.size();
  for (std::uint32_t q = 0; q < queries.size(); ++q) {
    const std::size_t first = g.entries.size();
    std::vector<double> mass(offsets.size(), 0.0);
    for (auto n : neighbors[q]) {
      if (n >= sources.size())
        throw IndexError("kernel geometry: neighbour index " + std::to_string(n) + " out of range [0, " +
                         std::to_string(sources.size()) + ")");
      const Vec3 rel = sources[n] - queries[q];
      for (std::uint32_t k = 0; k < offsets.size(); ++k) {
        const double h = 1.0 - distance(rel, offsets[k]) / sigma;
        if (h > 0.0) {
          g.entries.push_back({q, n, k, h});
          mass[k] += h;
        }
      }
    }
    if (!normalize) continue;
    for (std::size_t e = first; e < g.entries.size(); ++e) g.entries[e].influence /= mass[g.entries[e].kernel];
  }
  return g;
}

KernelGeometry build_kernel_geometry(std::span<const Vec3> queries, std::span<const Vec3> sources,
                                     double radius, std::span<const Vec3> offsets, double sigma,
                                     bool normalize) {
  GridIndex index(sources, radius);
  std::vector<std::vector<std::uint32_t>> neighbors(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) neighbors[q] = index.radius_search(queries[q], radius);
  return build_kernel_geometry(queries, sources, neighbors, offsets, sigma, normalize);
}

Var kernel_aggregate(Var features, const KernelGeometry& geometry) {
  const Tensor& f = features.value();
  if (f.rank() != 2 || f.rows() != geometry.num_sources)
    throw DimensionError("kernel_aggregate: features " + shape_string(f.shape()) + " vs " +
                         std::to_string(geometry.num_sources) + " sources");
  const std::size_t kin = f.cols();
  Tensor out({geometry.num_queries, geometry.num_kernels * kin});
  for (const auto& e : geometry.entries) {
    auto src = f.row(e.source);
    double* dst = out.row(e.query).data() + e.kernel * kin;
    for (std::size_t c = 0; c < kin; ++c) dst[c] += e.influence * src[c];
  }
  return features.tape->record(
      "kernel_aggregate", std::move(out), {features},
      [features, &geometry, kin](const Tensor& g, const Tensor&, Tape& t) {
        Tensor* gf = t.grad_slot(features);
        if (!gf) return;
        for (const auto& e : geometry.entries) {
          const double* src = g.row(e.query).data() + e.kernel * kin;
          auto dst = gf->row(e.source);
          for (std::size_t c = 0; c < kin; ++c) dst[c] += e.influence * src[c];
        }
      });
}

Var kp_conv(Var features, const KernelGeometry& geometry, Var weights) {
  const Shape ws = weights.shape();
  const std::size_t kin = features.value().cols();
  if (ws.size() != 3 || ws[0] != geometry.num_kernels || ws[1] != kin)
    throw DimensionError("kp_conv: weights " + shape_string(ws) + " incompatible with " +
                         std::to_string(geometry.num_kernels) + " kernels and input width " +
                         std::to_string(kin));
  Var aggregated = kernel_aggregate(features, geometry);
  return matmul(aggregated, reshape(weights, {ws[0] * ws[1], ws[2]}));
}

namespace {

std::vector<std::uint32_t> nearest_indices(std::span<const Vec3> queries, std::span<const Vec3> refs,
                                           double cell) {
  GridIndex index(refs, cell);
  std::vector<std::uint32_t> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = index.nearest(queries[i]);
  return out;
}

}  // namespace

CropGeometry build_crop_geometry(std::span<const Vec3> positions, const BackboneConfig& config,
                                 std::uint64_t cap_seed) {
  config.validate();
  if (positions.empty()) throw DimensionError("build_crop_geometry: empty crop");
  CropGeometry g;
  g.levels.resize(static_cast<std::size_t>(config.levels));
  g.levels[0].positions.assign(positions.begin(), positions.end());
  for (int l = 1; l < config.levels; ++l)
    g.levels[l].positions = grid_subsample(g.levels[l - 1].positions, config.cell(l)).coarse_positions;

  for (int l = 0; l < config.levels; ++l) {
    auto& lv = g.levels[l];
    const double cell = config.cell(l);
    const auto offsets = kernel_offsets(config.kernel_points, config.kernel_extent * cell);
    lv.conv = build_kernel_geometry(lv.positions, lv.positions, config.conv_radius * cell, offsets,
                                    config.kernel_extent * cell, config.normalize_influence);
    if (l > 0) {
      const double prev = config.cell(l - 1);
      const auto prev_offsets = kernel_offsets(config.kernel_points, config.kernel_extent * prev);
      lv.strided = build_kernel_geometry(lv.positions, g.levels[l - 1].positions,
                                         config.conv_radius * prev, prev_offsets,
                                         config.kernel_extent * prev, config.normalize_influence);
    }
    if (l + 1 < config.levels)
      lv.from_coarser = nearest_indices(lv.positions, g.levels[l + 1].positions, config.cell(l + 1));
    if (lv.positions.size() == 1 && l > 0)
      spdlog::debug("crop geometry: level {} collapsed to a single point", l);
  }

  if (config.levels >= 2) {
    const auto& hook = g.levels[static_cast<std::size_t>(config.hook_level())].positions;
    g.hook_subset.resize(hook.size());
    std::iota(g.hook_subset.begin(), g.hook_subset.end(), 0u);
    if (hook.size() > config.hook_cap) {
      std::sort(g.hook_subset.begin(), g.hook_subset.end(), [&](std::uint32_t a, std::uint32_t b) {
        return position_less(hook[a], a, hook[b], b);
      });
      std::mt19937_64 rng(cap_seed);
      std::shuffle(g.hook_subset.begin(), g.hook_subset.end(), rng);
      g.hook_subset.resize(config.hook_cap);
      std::sort(g.hook_subset.begin(), g.hook_subset.end());
    }
    for (auto i : g.hook_subset) g.hook_positions.push_back(hook[i]);
    const int below = std::max(config.hook_level() - 1, 0);
    g.from_hook = nearest_indices(g.levels[static_cast<std::size_t>(below)].positions, g.hook_positions,
                                  config.cell(config.hook_level()));
  }
  return g;
}

CropSample prepare_crop(const PointCloud& crop, const BackboneConfig& config, std::uint64_t cap_seed) {
  crop.validate();
  if (crop.num_classes != config.num_classes)
    throw ConfigError("prepare_crop: cloud has " + std::to_string(crop.num_classes) +
                      " classes, model expects " + std::to_string(config.num_classes));
  if (config.in_features != 4) throw ConfigError("prepare_crop: input features are [1, r, g, b]");
  CropSample s;
  s.geometry = build_crop_geometry(crop.positions, config, cap_seed);
  const std::size_t n = crop.size(), c = static_cast<std::size_t>(config.num_classes);
  s.features = Tensor({n, 4});
  s.one_hot = Tensor({n, c});
  s.mask = Tensor({n});
  s.labels = crop.labels;
  for (std::size_t i = 0; i < n; ++i) {
    s.features(i, 0) = 1.0;
    for (int d = 0; d < 3; ++d) s.features(i, 1 + d) = crop.colors[i][d];
    if (crop.weak_mask[i]) {
      s.mask[i] = 1.0;
      s.one_hot(i, static_cast<std::size_t>(crop.labels[i])) = 1.0;
      ++s.num_labeled;
    }
  }
  return s;
}

// ---- Backbone ----------------------------------------------------------------

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const auto nk = static_cast<std::size_t>(config_.kernel_points);
  auto make = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& v : t.data()) v = u(rng);
    params_.emplace(name, Parameter(name, std::move(t)));
  };
  const auto& w = config_.widths;
  const auto L = static_cast<std::size_t>(config_.levels);
  for (std::size_t l = 0; l < L; ++l) {
    const auto out = static_cast<std::size_t>(w[l]);
    const auto in = l == 0 ? static_cast<std::size_t>(config_.in_features) : static_cast<std::size_t>(w[l - 1]);
    const std::string pre = "enc" + std::to_string(l);
    make(pre + (l == 0 ? ".kp" : ".strided"), {nk, in, out}, nk * in);
    if (config_.bottleneck) {
      const std::size_t mid = out / 2;
      make(pre + ".down", {out, mid}, out);
      make(pre + ".kp2", {nk, mid, mid}, nk * mid);
      make(pre + ".up", {mid, out}, mid);
    }
  }
  std::size_t prev = static_cast<std::size_t>(w[L - 1]);
  if (L >= 2) {
    const std::size_t hook_in = prev + (config_.skip_connections ? static_cast<std::size_t>(w[L - 2]) : 0);
    make("dec.hook", {hook_in, static_cast<std::size_t>(config_.hook_width)}, hook_in);
    prev = static_cast<std::size_t>(config_.hook_width);
    for (int l = config_.hook_level() - 1; l >= 0; --l) {
      const std::size_t in = prev + (config_.skip_connections ? static_cast<std::size_t>(w[l]) : 0);
      make("dec.up" + std::to_string(l), {in, static_cast<std::size_t>(config_.decoder_width)}, in);
      prev = static_cast<std::size_t>(config_.decoder_width);
    }
  }
  make("head.weight", {prev, static_cast<std::size_t>(config_.num_classes)}, prev);
  params_.emplace("head.bias", Parameter("head.bias", Tensor({static_cast<std::size_t>(config_.num_classes)})));
}

std::vector<Parameter*> Backbone::parameter_list() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) out.push_back(&p);
  return out;
}

Parameter& Backbone::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("backbone has no parameter '" + name + "'");
  return it->second;
}

Var Backbone::activate(Var x) const {
  return config_.linear ? x : leaky_relu(x, config_.negative_slope);
}

Var Backbone::bind(Tape& tape, const std::string& name) { return tape.param(param(name)); }

std::vector<FeatureMap> Backbone::encode(Tape& tape, const CropGeometry& geometry, Var input) {
  if (geometry.levels.size() != static_cast<std::size_t>(config_.levels))
    throw DimensionError("encode: geometry built for a different level count");
  if (input.value().rows() != geometry.num_points() ||
      input.value().cols() != static_cast<std::size_t>(config_.in_features))
    throw DimensionError("encode: input " + shape_string(input.shape()) + " does not match crop of " +
                         std::to_string(geometry.num_points()) + " points");
  std::vector<FeatureMap> maps;
  Var x = input;
  for (int l = 0; l < config_.levels; ++l) {
    const auto& lv = geometry.levels[static_cast<std::size_t>(l)];
    const std::string pre = "enc" + std::to_string(l);
    x = l == 0 ? activate(kp_conv(x, lv.conv, bind(tape, pre + ".kp")))
               : activate(kp_conv(x, lv.strided, bind(tape, pre + ".strided")));
    if (config_.bottleneck) {
      Var h = activate(matmul(x, bind(tape, pre + ".down")));
      h = activate(kp_conv(h, lv.conv, bind(tape, pre + ".kp2")));
      h = matmul(h, bind(tape, pre + ".up"));
      x = activate(add(x, h));
    }
    maps.push_back({lv.positions, x, l});
  }
  return maps;
}

FeatureMap Backbone::decode_to_hook(Tape& tape, const CropGeometry& geometry,
                                    const std::vector<FeatureMap>& encoded) {
  if (config_.levels < 2 || encoded.size() != static_cast<std::size_t>(config_.levels))
    throw DimensionError("decode_to_hook: expected " + std::to_string(config_.levels) +
                         " encoder levels (at least 2), got " + std::to_string(encoded.size()));
  const auto hl = static_cast<std::size_t>(config_.hook_level());
  Var up = gather_rows(encoded.back().features, geometry.levels[hl].from_coarser);
  if (config_.skip_connections) up = concat_cols(up, encoded[hl].features);
  Var hook = activate(matmul(up, bind(tape, "dec.hook")));
  if (geometry.hook_subset.size() != geometry.levels[hl].positions.size())
    hook = gather_rows(hook, geometry.hook_subset);
  return {geometry.hook_positions, hook, config_.hook_level()};
}

Var Backbone::decode_from_hook(Tape& tape, const CropGeometry& geometry, const FeatureMap& hook,
                               const std::vector<FeatureMap>& encoded) {
  if (hook.features.value().rows() != geometry.hook_positions.size())
    throw DimensionError("decode_from_hook: hook features have " +
                         std::to_string(hook.features.value().rows()) + " rows, expected " +
                         std::to_string(geometry.hook_positions.size()));
  if (encoded.size() != static_cast<std::size_t>(config_.levels))
    throw DimensionError("decode_from_hook: encoder level mismatch");
  Var x = hook.features;
  const int hl = config_.hook_level();
  if (hl == 0) {
    if (geometry.hook_subset.size() != geometry.num_points()) x = gather_rows(x, geometry.from_hook);
  } else {
    for (int l = hl - 1; l >= 0; --l) {
      const auto& idx = l == hl - 1 ? geometry.from_hook : geometry.levels[static_cast<std::size_t>(l)].from_coarser;
      Var up = gather_rows(x, idx);
      if (config_.skip_connections) up = concat_cols(up, encoded[static_cast<std::size_t>(l)].features);
      x = activate(matmul(up, bind(tape, "dec.up" + std::to_string(l))));
    }
  }
  return add_row_bias(matmul(x, bind(tape, "head.weight")), bind(tape, "head.bias"));
}

Backbone::Forward Backbone::forward_to_hook(Tape& tape, const CropGeometry& geometry, Var input) {
  Forward f;
  f.encoded = encode(tape, geometry, input);
  f.hook = decode_to_hook(tape, geometry, f.encoded);
  return f;
}

Var Backbone::logits(Tape& tape, const CropGeometry& geometry, Var input) {
  auto f = forward_to_hook(tape, geometry, input);
  return decode_from_hook(tape, geometry, f.hook, f.encoded);
}

}  // namespace dsprop
