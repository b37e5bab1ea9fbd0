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

#include "dsprop/trainer.hpp"

#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dsprop/csfr.hpp"
#include "dsprop/errors.hpp"
#include "dsprop/isfr.hpp"

namespace dsprop {

namespace {

constexpr std::uint64_t kBackboneStream = 0x4242;
constexpr std::uint64_t kCrossStream = 0x4343;
constexpr std::uint64_t kSelfStream = 0x5353;

LossConfig without_cross(LossConfig c) {
  c.cr = false;
  c.seg_c = false;
  return c;
}

LossConfig without_self(LossConfig c) {
  c.sr = false;
  c.seg_s = false;
  return c;
}

Phase pair_phase(const TrainConfig& c, bool cross, int epochs) {
  LossConfig loss = without_self(c.loss);
  return {"pair", StepKind::kPair, cross ? loss : without_cross(loss), epochs};
}

Phase single_phase(const TrainConfig& c, bool self, int epochs) {
  LossConfig loss = without_cross(c.loss);
  return {"single", StepKind::kSingle, self ? loss : without_self(loss), epochs};
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t phase, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

void merge(LossReport& into, const LossReport& from) {
  for (const auto& [k, v] : from.terms) into.add(k, v);
}

void load_value(Parameter& p, const std::map<std::string, Tensor>& tensors) {
  auto it = tensors.find(p.name());
  if (it == tensors.end()) throw FormatError("checkpoint lacks parameter '" + p.name() + "'");
  if (it->second.shape() != p.value().shape())
    throw FormatError("checkpoint parameter '" + p.name() + "' has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(p.value().shape()));
  p.value() = it->second;
  p.zero_grad();
}

void load_optional(std::optional<Parameter>& p, const char* name, const std::map<std::string, Tensor>& tensors) {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    p.reset();
    return;
  }
  p.emplace(name, it->second);
}

}  // namespace

std::vector<Phase> build_schedule(const TrainConfig& c) {
  const int e1 = c.stage1_epochs, e2 = c.stage2_epochs;
  std::vector<Phase> out;
  switch (c.mode) {
    case TrainMode::kBaseline:
      out = {pair_phase(c, false, e1), single_phase(c, false, e2)};
      break;
    case TrainMode::kCsfr:
      out = {pair_phase(c, true, e1), single_phase(c, false, e2)};
      break;
    case TrainMode::kIsfr:
      out = {pair_phase(c, false, e1), single_phase(c, true, e2)};
      break;
    case TrainMode::kCsfrIsfr:
      out = {pair_phase(c, true, e1), single_phase(c, true, e2)};
      break;
    case TrainMode::kIsfrCsfr:
      out = {single_phase(c, true, e1), pair_phase(c, true, e2)};
      break;
    case TrainMode::kJoint:
      out = {{"joint", StepKind::kJoint, c.loss, e1 + e2}};
      break;
  }
  for (std::size_t p = 0; p < out.size(); ++p) out[p].name = "phase" + std::to_string(p) + ":" + out[p].name;
  return out;
}

BackboneConfig run_backbone_config(const TrainConfig& config) {
  BackboneConfig b = config.model;
  b.init_seed = mix_seed(mix_seed(config.seed, kBackboneStream), config.model.init_seed);
  return b;
}

Tensor initial_cross_weights(const TrainConfig& config) {
  return init_affinity_weights(static_cast<std::size_t>(config.model.hook_width),
                               mix_seed(config.seed, kCrossStream));
}

Tensor initial_self_weights(const TrainConfig& config, std::size_t phase) {
  return init_affinity_weights(static_cast<std::size_t>(config.model.hook_width),
                               mix_seed(mix_seed(config.seed, kSelfStream), phase));
}

Model::Model(TrainConfig cfg) : config(std::move(cfg)), backbone(run_backbone_config(config)) {}

std::vector<Parameter*> Model::parameters() {
  auto out = backbone.parameter_list();
  if (w_c) out.push_back(&*w_c);
  if (w_s) out.push_back(&*w_s);
  return out;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig config = parse_train_config(ckpt.config_text, {});
  if (config_hash(config) != ckpt.config_hash) throw FormatError("checkpoint config text does not match its hash");
  Model m(std::move(config));
  for (auto* p : m.backbone.parameter_list()) load_value(*p, ckpt.parameters);
  load_optional(m.w_c, "w_c", ckpt.parameters);
  load_optional(m.w_s, "w_s", ckpt.parameters);
  return m;
}

Trainer::Trainer(TrainConfig config, const Dataset& data) : Trainer(config, data, build_schedule(config)) {}

Trainer::Trainer(TrainConfig config, const Dataset& data, std::vector<Phase> phases)
    : model_(std::move(config)),
      data_(&data),
      phases_(std::move(phases)),
      optimizer_(model_.config.learning_rate, model_.config.momentum) {
  model_.config.validate();
  if (model_.config.model.num_classes != data.num_classes)
    throw ConfigError("model has " + std::to_string(model_.config.model.num_classes) + " classes, dataset has " +
                      std::to_string(data.num_classes));
  for (const auto& p : phases_)
    if (p.uses_cross()) model_.w_c.emplace("w_c", initial_cross_weights(model_.config));
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config_hash != config_hash(model_.config))
    throw ConfigError("checkpoint config hash mismatch: checkpoint was trained with a different configuration");
  if (ckpt.phase > phases_.size()) throw FormatError("checkpoint phase out of range");
  for (auto* p : model_.backbone.parameter_list()) load_value(*p, ckpt.parameters);
  load_optional(model_.w_c, "w_c", ckpt.parameters);
  load_optional(model_.w_s, "w_s", ckpt.parameters);
  optimizer_.velocity().clear();
  for (const auto& [name, v] : ckpt.velocity) optimizer_.velocity().emplace(name, v);
  phase_ = ckpt.phase;
  epoch_ = static_cast<int>(ckpt.epoch);
  entered_ = epoch_ > 0;
  history_.clear();
}

bool Trainer::finished() const { return phase_ >= phases_.size(); }

void Trainer::enter_phase() {
  const Phase& ph = phases_[phase_];
  if (phase_ > 0 && model_.config.reset_velocity) optimizer_.reset();
  if (ph.uses_cross() && !model_.w_c) model_.w_c.emplace("w_c", initial_cross_weights(model_.config));
  if (ph.uses_self()) model_.w_s.emplace("w_s", initial_self_weights(model_.config, phase_));
  entered_ = true;
  spdlog::info("{}: {} epochs x {} steps", ph.name, ph.epochs, model_.config.steps_per_epoch);
}

std::vector<Parameter*> Trainer::trainable(const Phase& phase) {
  auto out = model_.backbone.parameter_list();
  if (phase.uses_cross()) out.push_back(&*model_.w_c);
  if (phase.uses_self()) out.push_back(&*model_.w_s);
  return out;
}

void Trainer::clip_gradients(std::span<Parameter* const> params) const {
  const double limit = model_.config.grad_clip;
  if (limit <= 0.0) return;
  double sq = 0.0;
  for (auto* p : params)
    for (double g : p->grad().data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= limit) return;
  const double f = limit / norm;
  for (auto* p : params)
    for (double& g : p->grad().data()) g *= f;
}

LossReport Trainer::step(const Phase& phase, std::mt19937_64& rng, int epoch, int index) {
  const auto& cfg = model_.config;
  auto params = trainable(phase);
  for (auto* p : model_.parameters()) p->zero_grad();

  Tape tape;
  Var total;
  LossReport report;
  std::optional<CropSample> a, b;
  if (phase.kind == StepKind::kSingle) {
    Crop crop = draw_labeled_crop(*data_, cfg.crop_radius, rng);
    a = prepare_crop(crop.cloud, model_.backbone.config(), rng());
    Parameter unused;
    Parameter& w_s = model_.w_s ? *model_.w_s : unused;
    auto r = stage2_loss(tape, model_.backbone, w_s, *a, phase.loss);
    total = r.total;
    report = r.report;
  } else {
    auto [ci, cj] = draw_crop_pair(*data_, cfg.crop_radius, rng);
    a = prepare_crop(ci.cloud, model_.backbone.config(), rng());
    b = prepare_crop(cj.cloud, model_.backbone.config(), rng());
    Parameter unused;
    Parameter& w_c = model_.w_c ? *model_.w_c : unused;
    if (phase.kind == StepKind::kPair) {
      auto r = stage1_loss(tape, model_.backbone, w_c, *a, *b, phase.loss);
      total = r.total;
      report = r.report;
    } else {
      Parameter& w_s = model_.w_s ? *model_.w_s : unused;
      CropForward fi = forward_crop(tape, model_.backbone, *a);
      CropForward fj = forward_crop(tape, model_.backbone, *b);
      auto s1 = stage1_loss(tape, model_.backbone, w_c, fi, fj, phase.loss);
      auto s2i = stage2_loss(tape, model_.backbone, w_s, fi, phase.loss);
      auto s2j = stage2_loss(tape, model_.backbone, w_s, fj, phase.loss);
      total = add(add(s1.total, s2i.total), s2j.total);
      report = s1.report;
      merge(report, s2i.report);
      merge(report, s2j.report);
    }
  }
  report.total = total.value().item();
  if (!std::isfinite(report.total)) {
    std::ostringstream msg;
    msg << "non-finite loss in " << phase.name << " epoch " << epoch << " step " << index << ":";
    for (const auto& [k, v] : report.terms) msg << ' ' << k << '=' << v;
    throw NumericError(msg.str());
  }
  tape.backward(total);
  clip_gradients(params);
  optimizer_.step(params);

  if (step_hook_) step_hook_({phase_, epoch, index, phase.kind, &*a, b ? &*b : nullptr, &report});
  return report;
}

bool Trainer::run_epoch() {
  while (!finished()) {
    if (!entered_) enter_phase();
    const Phase& ph = phases_[phase_];
    if (epoch_ >= ph.epochs) {
      ++phase_;
      epoch_ = 0;
      entered_ = false;
      continue;
    }
    auto rng = epoch_rng(model_.config.seed, phase_, epoch_);
    EpochLog log;
    log.phase = phase_;
    log.epoch = epoch_ + 1;
    const int steps = model_.config.steps_per_epoch;
    for (int s = 0; s < steps; ++s) {
      LossReport r = step(ph, rng, epoch_ + 1, s);
      for (const auto& [k, v] : r.terms) log.terms[k] += v / steps;
      log.loss += r.total / steps;
    }
    ++epoch_;
    if (epoch_ >= ph.epochs) {
      ++phase_;
      epoch_ = 0;
      entered_ = false;
    }
    std::ostringstream terms;
    for (const auto& [k, v] : log.terms) terms << ' ' << k << '=' << v;
    spdlog::info("{} epoch {}/{} loss {:.6f}{}", ph.name, log.epoch, ph.epochs, log.loss, terms.str());
    history_.push_back(log);
    if (epoch_hook_) epoch_hook_(log);
    return true;
  }
  return false;
}

void Trainer::run() {
  while (run_epoch()) {
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_hash = config_hash(model_.config);
  c.config_text = format_train_config(model_.config);
  c.phase = static_cast<std::uint32_t>(phase_);
  c.epoch = static_cast<std::uint32_t>(epoch_);
  for (const auto& [name, p] : model_.backbone.parameters()) c.parameters.emplace(name, p.value());
  if (model_.w_c) c.parameters.emplace("w_c", model_.w_c->value());
  if (model_.w_s) c.parameters.emplace("w_s", model_.w_s->value());
  for (const auto& [name, v] : optimizer_.velocity()) c.velocity.emplace(name, v);
  return c;
}

Checkpoint run_schedule(const TrainConfig& config, const Dataset& data) {
  Trainer t(config, data);
  t.run();
  return t.checkpoint();
}

namespace {

std::vector<Phase> two_stage(const TrainConfig& config) {
  auto phases = build_schedule(config);
  if (phases.size() != 2) throw ConfigError("mode " + to_string(config.mode) + " has no separate stages");
  return phases;
}

}  // namespace

Checkpoint train_stage1(const TrainConfig& config, const Dataset& data) {
  auto phases = two_stage(config);
  phases.pop_back();
  Trainer t(config, data, phases);
  t.run();
  Checkpoint c = t.checkpoint();
  return c;
}

Checkpoint train_stage2(const TrainConfig& config, const Checkpoint& stage1, const Dataset& data) {
  if (stage1.phase != 1 || stage1.epoch != 0) throw ConfigError("train_stage2 needs a completed stage-1 checkpoint");
  Trainer t(config, data, two_stage(config));
  t.restore(stage1);
  t.run();
  return t.checkpoint();
}

}  // namespace dsprop
