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
#include <map>
#include <string>
#include <string_view>

#include "dsprop/tensor.hpp"

namespace dsprop {

// Binary checkpoint container, little-endian:
//   "DSPK" | u32 version | u64 config hash | u32 phase | u32 epoch
//   | u32 text_len | config text
//   | u32 P | P x tensor (parameters) | u32 V | V x tensor (velocity)
// tensor := u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[prod]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::uint32_t phase = 0;  // next phase to run
  std::uint32_t epoch = 0;  // epochs already completed within that phase
  std::string config_text;
  std::map<std::string, Tensor> parameters;
  std::map<std::string, Tensor> velocity;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsprop
