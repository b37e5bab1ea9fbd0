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

#include "dsprop/config.hpp"

#include <array>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dsprop/cloud_io.hpp"
#include "dsprop/errors.hpp"

namespace dsprop {

namespace pt = boost::property_tree;

namespace {

constexpr std::array<std::pair<TrainMode, const char*>, 6> kModes = {{
    {TrainMode::kBaseline, "baseline"},
    {TrainMode::kCsfr, "csfr"},
    {TrainMode::kIsfr, "isfr"},
    {TrainMode::kCsfrIsfr, "csfr-isfr"},
    {TrainMode::kIsfrCsfr, "isfr-csfr"},
    {TrainMode::kJoint, "joint"},
}};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::int64_t to_int(const std::string& s) {
  std::size_t used = 0;
  long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
  std::size_t used = 0;
  unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw std::invalid_argument(s);
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

// One config key: how to render it and how to parse it back.
struct Field {
  const char* section;
  const char* key;
  bool hashed;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::filesystem::path&)> set;
};

template <class T>
Field number(const char* section, const char* key, T TrainConfig::*member) {
  return {section, key, true,
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
            if constexpr (std::is_floating_point_v<T>) c.*member = to_double(s);
            else if constexpr (std::is_unsigned_v<T>) c.*member = static_cast<T>(to_uint(s));
            else c.*member = static_cast<T>(to_int(s));
          }};
}

template <class T>
Field loss_number(const char* key, T LossConfig::*member) {
  return {"loss", key, true,
          [member](const TrainConfig& c) {
            if constexpr (std::is_same_v<T, bool>) return format_bool(c.loss.*member);
            else return format_double(c.loss.*member);
          },
          [member](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
            if constexpr (std::is_same_v<T, bool>) c.loss.*member = to_bool(s);
            else c.loss.*member = to_double(s);
          }};
}

template <class T>
Field model_number(const char* key, T BackboneConfig::*member) {
  return {"model", key, true,
          [member](const TrainConfig& c) {
            if constexpr (std::is_same_v<T, bool>) return format_bool(c.model.*member);
            else if constexpr (std::is_floating_point_v<T>) return format_double(c.model.*member);
            else return std::to_string(c.model.*member);
          },
          [member](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
            if constexpr (std::is_same_v<T, bool>) c.model.*member = to_bool(s);
            else if constexpr (std::is_floating_point_v<T>) c.model.*member = to_double(s);
            else if constexpr (std::is_unsigned_v<T>) c.model.*member = static_cast<T>(to_uint(s));
            else c.model.*member = static_cast<T>(to_int(s));
          }};
}

Field path_field(const char* section, const char* key, std::filesystem::path TrainConfig::*member) {
  return {section, key, false,
          [member](const TrainConfig& c) { return (c.*member).string(); },
          [member](TrainConfig& c, const std::string& s, const std::filesystem::path& base) {
            std::filesystem::path p(s);
            c.*member = (p.empty() || p.is_absolute()) ? p : (base / p).lexically_normal();
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"run", "name", false, [](const TrainConfig& c) { return c.name; },
                 [](TrainConfig& c, const std::string& s, const std::filesystem::path&) { c.name = s; }});
    f.push_back({"run", "mode", true, [](const TrainConfig& c) { return to_string(c.mode); },
                 [](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
                   c.mode = parse_train_mode(s);
                 }});
    f.push_back(number("run", "seed", &TrainConfig::seed));
    f.push_back(path_field("run", "checkpoint_dir", &TrainConfig::checkpoint_dir));
    f.push_back(number("run", "checkpoint_every", &TrainConfig::checkpoint_every));
    f.back().hashed = false;

    f.push_back(path_field("data", "manifest", &TrainConfig::manifest));
    f.push_back({"data", "train_split", true, [](const TrainConfig& c) { return c.train_split; },
                 [](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
                   c.train_split = s;
                 }});
    f.push_back(number("data", "weak_fraction", &TrainConfig::weak_fraction));
    f.push_back(number("data", "input_ratio", &TrainConfig::input_ratio));
    f.push_back(number("data", "crop_radius", &TrainConfig::crop_radius));
    f.push_back(number("data", "label_seed", &TrainConfig::label_seed));

    f.push_back(number("schedule", "stage1_epochs", &TrainConfig::stage1_epochs));
    f.push_back(number("schedule", "stage2_epochs", &TrainConfig::stage2_epochs));
    f.push_back(number("schedule", "steps_per_epoch", &TrainConfig::steps_per_epoch));
    f.push_back({"schedule", "reset_velocity", true,
                 [](const TrainConfig& c) { return format_bool(c.reset_velocity); },
                 [](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
                   c.reset_velocity = to_bool(s);
                 }});

    f.push_back(number("optimizer", "learning_rate", &TrainConfig::learning_rate));
    f.push_back(number("optimizer", "momentum", &TrainConfig::momentum));
    f.push_back(number("optimizer", "grad_clip", &TrainConfig::grad_clip));

    f.push_back(loss_number("seg_basic_weight", &LossConfig::seg_basic_weight));
    f.push_back(loss_number("cr", &LossConfig::cr));
    f.push_back(loss_number("cr_weight", &LossConfig::cr_weight));
    f.push_back(loss_number("seg_c", &LossConfig::seg_c));
    f.push_back(loss_number("seg_c_weight", &LossConfig::seg_c_weight));
    f.push_back(loss_number("sr", &LossConfig::sr));
    f.push_back(loss_number("sr_weight", &LossConfig::sr_weight));
    f.push_back(loss_number("seg_s", &LossConfig::seg_s));
    f.push_back(loss_number("seg_s_weight", &LossConfig::seg_s_weight));
    f.push_back({"loss", "frobenius", true,
                 [](const TrainConfig& c) {
                   return std::string(c.loss.frobenius == FrobeniusMode::kMean ? "mean" : "sum");
                 },
                 [](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
                   if (s == "mean") c.loss.frobenius = FrobeniusMode::kMean;
                   else if (s == "sum") c.loss.frobenius = FrobeniusMode::kSum;
                   else throw std::invalid_argument(s);
                 }});
    f.push_back(loss_number("stop_gradient_basic", &LossConfig::stop_gradient_basic));

    f.push_back(model_number("levels", &BackboneConfig::levels));
    f.push_back(model_number("first_cell", &BackboneConfig::first_cell));
    f.push_back({"model", "widths", true,
                 [](const TrainConfig& c) {
                   std::string out;
                   for (int w : c.model.widths) out += (out.empty() ? "" : " ") + std::to_string(w);
                   return out;
                 },
                 [](TrainConfig& c, const std::string& s, const std::filesystem::path&) {
                   std::istringstream in(s);
                   std::vector<int> widths;
                   std::string tok;
                   while (in >> tok) widths.push_back(static_cast<int>(to_int(tok)));
                   c.model.widths = std::move(widths);
                 }});
    f.push_back(model_number("hook_width", &BackboneConfig::hook_width));
    f.push_back(model_number("decoder_width", &BackboneConfig::decoder_width));
    f.push_back(model_number("kernel_points", &BackboneConfig::kernel_points));
    f.push_back(model_number("conv_radius", &BackboneConfig::conv_radius));
    f.push_back(model_number("kernel_extent", &BackboneConfig::kernel_extent));
    f.push_back(model_number("negative_slope", &BackboneConfig::negative_slope));
    f.push_back(model_number("hook_cap", &BackboneConfig::hook_cap));
    f.push_back(model_number("num_classes", &BackboneConfig::num_classes));
    f.push_back(model_number("bottleneck", &BackboneConfig::bottleneck));
    f.push_back(model_number("skip_connections", &BackboneConfig::skip_connections));
    f.push_back(model_number("normalize_influence", &BackboneConfig::normalize_influence));
    f.push_back(model_number("init_seed", &BackboneConfig::init_seed));

    f.push_back(number("eval", "seed", &TrainConfig::eval_seed));
    return f;
  }();
  return all;
}

std::string render(const TrainConfig& config, bool hashed_only) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (hashed_only && !f.hashed) continue;
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

}  // namespace

TrainMode parse_train_mode(const std::string& s) {
  for (const auto& [mode, name] : kModes)
    if (s == name) return mode;
  throw ConfigError("unknown training mode '" + s + "'");
}

std::string to_string(TrainMode mode) {
  for (const auto& [m, name] : kModes)
    if (m == mode) return name;
  return "unknown";
}

void TrainConfig::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(weak_fraction > 0.0 && weak_fraction <= 1.0)) throw ConfigError("weak_fraction must lie in (0, 1]");
  if (!(input_ratio > 0.0 && input_ratio <= 1.0)) throw ConfigError("input_ratio must lie in (0, 1]");
  if (!(crop_radius > 0.0)) throw ConfigError("crop_radius must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  for (double w : {loss.seg_basic_weight, loss.cr_weight, loss.seg_c_weight, loss.sr_weight, loss.seg_s_weight})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be >= 0");
  model.validate();
}

TrainConfig parse_train_config(std::string_view text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  std::map<std::string, const Field*> known;
  for (const auto& f : fields()) known[std::string(f.section) + "." + f.key] = &f;

  TrainConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      auto it = known.find(section + "." + key);
      if (it == known.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      try {
        it->second->set(c, value.data(), base_dir);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception&) {
        throw ConfigError("config: bad value for [" + section + "] " + key + ": '" + value.data() + "'");
      }
    }
  }
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("cannot read config " + path.string());
  auto base = std::filesystem::absolute(path).parent_path();
  return parse_train_config(read_file(path), base);
}

std::string format_train_config(const TrainConfig& config) { return render(config, false); }

std::uint64_t config_hash(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : render(config, true)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dsprop
