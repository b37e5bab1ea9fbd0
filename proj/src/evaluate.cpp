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

#include "dsprop/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "dsprop/csfr.hpp"
#include "dsprop/errors.hpp"
#include "dsprop/isfr.hpp"

namespace dsprop {

Branch parse_branch(const std::string& s) {
  if (s == "basic") return Branch::kBasic;
  if (s == "cross") return Branch::kCross;
  if (s == "intra") return Branch::kIntra;
  throw ConfigError("unknown branch '" + s + "' (expected basic, cross or intra)");
}

std::string to_string(Branch branch) {
  switch (branch) {
    case Branch::kBasic: return "basic";
    case Branch::kCross: return "cross";
    case Branch::kIntra: return "intra";
  }
  return "unknown";
}

ConfusionMatrix::ConfusionMatrix(std::int32_t num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::span<const std::int32_t> truth, std::span<const std::int32_t> prediction) {
  if (truth.size() != prediction.size())
    throw DimensionError("confusion: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(prediction.size()) + " predictions");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes_ || prediction[i] < 0 || prediction[i] >= classes_)
      throw IndexError("confusion: class out of range");
    ++counts_[static_cast<std::size_t>(truth[i]) * classes_ + prediction[i]];
  }
}

std::uint64_t ConfusionMatrix::at(std::int32_t truth, std::int32_t prediction) const {
  return counts_.at(static_cast<std::size_t>(truth) * classes_ + prediction);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::truth_count(std::int32_t c) const {
  std::uint64_t n = 0;
  for (std::int32_t p = 0; p < classes_; ++p) n += at(c, p);
  return n;
}

std::uint64_t ConfusionMatrix::predicted_count(std::int32_t c) const {
  std::uint64_t n = 0;
  for (std::int32_t t = 0; t < classes_; ++t) n += at(t, c);
  return n;
}

double ConfusionMatrix::iou(std::int32_t c) const {
  const std::uint64_t tp = at(c, c);
  const std::uint64_t uni = truth_count(c) + predicted_count(c) - tp;
  return uni == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(uni);
}

double ConfusionMatrix::miou() const {
  double sum = 0.0;
  int present = 0;
  for (std::int32_t c = 0; c < classes_; ++c) {
    if (truth_count(c) == 0) continue;
    sum += iou(c);
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

EvalReport make_report(const ConfusionMatrix& confusion) {
  EvalReport r;
  for (std::int32_t c = 0; c < confusion.num_classes(); ++c) {
    r.iou.push_back(confusion.iou(c));
    r.present.push_back(confusion.truth_count(c) > 0);
    r.truth_counts.push_back(confusion.truth_count(c));
    r.predicted_counts.push_back(confusion.predicted_count(c));
  }
  r.miou = confusion.miou();
  r.points = confusion.total();
  return r;
}

namespace {

// Logits of one eval crop (on its input points) for the chosen branch.
Tensor branch_logits(Model& model, Branch branch, const CropSample& crop, const CropSample* partner) {
  Tape tape;
  CropForward f = forward_crop(tape, model.backbone, crop);
  if (branch == Branch::kBasic) return f.logits.value();
  LossConfig loss;
  loss.seg_basic_weight = 0.0;
  if (branch == Branch::kIntra) {
    loss.cr = loss.seg_c = false;
    loss.sr = true;
    auto r = stage2_loss(tape, model.backbone, *model.w_s, f, loss);
    return r.logits_self.value();
  }
  loss.sr = loss.seg_s = false;
  loss.cr = true;
  CropForward g = forward_crop(tape, model.backbone, *partner);
  auto r = stage1_loss(tape, model.backbone, *model.w_c, f, g, loss);
  return r.logits_j_cross.value();
}

void add_softmax_votes(const Tensor& logits, std::span<const std::uint32_t> indices, Tensor& votes) {
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    auto out = votes.row(indices[r]);
    for (std::size_t k = 0; k < c; ++k) out[k] += std::exp(row[k] - m) / z;
  }
}

}  // namespace

EvalReport evaluate(Model& model, const Dataset& data, Branch branch, const EvalOptions& options) {
  if (data.scenes.empty()) throw ConfigError("evaluation split is empty");
  if (branch == Branch::kCross && !model.w_c) throw ConfigError("cross branch needs a checkpoint with W_c");
  if (branch == Branch::kIntra && !model.w_s) throw ConfigError("intra branch needs a checkpoint with W_s");
  const auto start = std::chrono::steady_clock::now();
  for (auto* p : {model.w_c ? &*model.w_c : nullptr, model.w_s ? &*model.w_s : nullptr})
    if (p) p->reset_access_count();

  const auto& bcfg = model.backbone.config();
  std::vector<std::vector<Crop>> crops;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pool;
  for (std::uint32_t s = 0; s < data.scenes.size(); ++s) {
    crops.push_back(cover_scene(data, s, options.crop_radius));
    for (std::uint32_t k = 0; k < crops.back().size(); ++k) pool.emplace_back(s, k);
  }
  auto sample_of = [&](std::uint32_t s, std::uint32_t k) {
    return prepare_crop(crops[s][k].cloud, bcfg, mix_seed(options.partner_seed, (std::uint64_t{s} << 32) | k));
  };

  std::mt19937_64 partner_rng(options.partner_seed);
  ConfusionMatrix confusion(data.num_classes);
  EvalReport report;
  std::uint64_t crop_count = 0;
  for (std::uint32_t s = 0; s < data.scenes.size(); ++s) {
    const auto& scene = data.scenes[s];
    Tensor votes({scene.input.size(), static_cast<std::size_t>(data.num_classes)});
    for (std::uint32_t k = 0; k < crops[s].size(); ++k) {
      CropSample sample = sample_of(s, k);
      std::optional<CropSample> partner;
      if (branch == Branch::kCross) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        auto [ps, pk] = pool[pick(partner_rng)];
        if (pool.size() > 1)
          while (ps == s && pk == k) std::tie(ps, pk) = pool[pick(partner_rng)];
        partner = sample_of(ps, pk);
      }
      Tensor logits = branch_logits(model, branch, sample, partner ? &*partner : nullptr);
      add_softmax_votes(logits, crops[s][k].sphere.indices, votes);
      ++crop_count;
    }
    std::vector<std::int32_t> coarse(scene.input.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) {
      auto row = votes.row(i);
      coarse[i] = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    auto full = back_project<std::int32_t>(coarse, scene.map);
    confusion.add(scene.original.labels, full);
  }

  report = make_report(confusion);
  report.split = options.split;
  report.branch = branch;
  report.class_names = data.class_names;
  report.crops = crop_count;
  for (auto* p : {model.w_c ? &*model.w_c : nullptr, model.w_s ? &*model.w_s : nullptr})
    if (p) report.module_accesses += p->access_count();
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  spdlog::info("eval {} [{}]: mIoU {:.4f} over {} points, {} crops, {:.2f}s", report.split, to_string(branch),
               report.miou, report.points, report.crops, report.runtime_seconds);
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    classes.push_back({{"class", c},
                       {"name", c < r.class_names.size() ? r.class_names[c] : std::to_string(c)},
                       {"iou", r.iou[c]},
                       {"present", static_cast<bool>(r.present[c])},
                       {"truth_points", r.truth_counts[c]},
                       {"predicted_points", r.predicted_counts[c]}});
  }
  return {{"split", r.split},
          {"branch", to_string(r.branch)},
          {"miou", r.miou},
          {"classes", classes},
          {"points", r.points},
          {"crops", r.crops},
          {"module_accesses", r.module_accesses},
          {"runtime_seconds", r.runtime_seconds}};
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  char line[128];
  out << "split " << r.split << ", branch " << to_string(r.branch) << '\n';
  std::snprintf(line, sizeof line, "%-4s %-16s %8s %12s %12s\n", "id", "class", "IoU", "truth", "predicted");
  out << line;
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    std::string name = c < r.class_names.size() ? r.class_names[c] : std::to_string(c);
    std::snprintf(line, sizeof line, "%-4zu %-16s %8s %12llu %12llu\n", c, name.c_str(),
                  r.present[c] ? (std::to_string(100.0 * r.iou[c]).substr(0, 6)).c_str() : "-",
                  static_cast<unsigned long long>(r.truth_counts[c]),
                  static_cast<unsigned long long>(r.predicted_counts[c]));
    out << line;
  }
  std::snprintf(line, sizeof line, "mIoU %.2f over %llu points (%llu crops, %.2fs)\n", 100.0 * r.miou,
                static_cast<unsigned long long>(r.points), static_cast<unsigned long long>(r.crops),
                r.runtime_seconds);
  out << line;
  return out.str();
}

}  // namespace dsprop
