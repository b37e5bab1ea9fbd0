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

#include "dsprop/checkpoint.hpp"

#include <cstring>

#include "binary_io.hpp"
#include "dsprop/cloud_io.hpp"
#include "dsprop/errors.hpp"

namespace dsprop {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'K'};
constexpr std::uint32_t kMaxRank = 8;

void put_string(Writer& w, const std::string& s) {
  w.uint(static_cast<std::uint32_t>(s.size()));
  w.bytes(s.data(), s.size());
}

std::string get_string(Reader& r) {
  auto n = r.uint<std::uint32_t>();
  return std::string(r.take(n));
}

void put_tensors(Writer& w, const std::map<std::string, Tensor>& tensors) {
  w.uint(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_string(w, name);
    w.uint(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint(static_cast<std::uint64_t>(d));
    for (double v : t.data()) w.f64(v);
  }
}

std::map<std::string, Tensor> get_tensors(Reader& r) {
  std::map<std::string, Tensor> out;
  auto count = r.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = get_string(r);
    auto rank = r.uint<std::uint32_t>();
    if (rank > kMaxRank) throw FormatError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      auto v = r.uint<std::uint64_t>();
      if (v != 0 && total > UINT64_MAX / 8 / v) throw FormatError("checkpoint tensor '" + name + "' is too large");
      total *= v;
      d = static_cast<std::size_t>(v);
    }
    r.need(static_cast<std::size_t>(total) * 8);
    std::vector<double> data(static_cast<std::size_t>(total));
    for (auto& v : data) v = r.f64();
    if (!out.emplace(name, Tensor(shape, std::move(data))).second)
      throw FormatError("checkpoint repeats tensor '" + name + "'");
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint(ckpt.version);
  w.uint(ckpt.config_hash);
  w.uint(ckpt.phase);
  w.uint(ckpt.epoch);
  put_string(w, ckpt.config_text);
  put_tensors(w, ckpt.parameters);
  put_tensors(w, ckpt.velocity);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "checkpoint");
  if (std::memcmp(r.take(4).data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = r.uint<std::uint32_t>();
  if (c.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
  c.config_hash = r.uint<std::uint64_t>();
  c.phase = r.uint<std::uint32_t>();
  c.epoch = r.uint<std::uint32_t>();
  c.config_text = get_string(r);
  c.parameters = get_tensors(r);
  c.velocity = get_tensors(r);
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace dsprop
