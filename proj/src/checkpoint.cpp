/* Copyright 2026 The firp-infer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "firp/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

#include "firp/errors.hpp"

namespace firp {
namespace {

constexpr char kMagic[4] = {'F', 'I', 'R', 'P'};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) u32(std::bit_cast<std::uint32_t>(v));
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write to '" + path_ + "' failed");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot read checkpoint '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("checkpoint '" + path_ + "' is truncated");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  }
  std::string str(std::uint32_t limit) {
    const auto n = u32();
    if (n > limit) throw IoError("checkpoint '" + path_ + "': string length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    auto name = str(1024);
    const auto rank = u32();
    if (rank > 4) throw IoError("tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = u32();
      if (d > (1u << 24)) throw IoError("tensor '" + name + "' has an implausible dimension");
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    if (numel > (std::size_t{1} << 28)) throw IoError("tensor '" + name + "' is too large");
    Tensor t(shape);
    for (auto& v : t.values()) v = std::bit_cast<float>(u32());
    return {std::move(name), std::move(t)};
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

std::string proj_name(int step, const char* part) { return "firp.proj." + std::to_string(step) + "." + part; }

}  // namespace

std::string sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".firp.json"; }

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ckpt.config.validate();
  if (ckpt.projections.K() > 0) ckpt.projections.validate(ckpt.config);
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(ckpt.config.to_json().dump());
  std::uint32_t count = 0;
  ckpt.weights.for_each([&](const std::string&, const Tensor&) { ++count; });
  w.u32(count + 2 * static_cast<std::uint32_t>(ckpt.projections.K()));
  ckpt.weights.for_each([&](const std::string& name, const Tensor& t) { w.tensor(name, t); });
  for (const auto& p : ckpt.projections.projections) {
    w.tensor(proj_name(p.step, "W"), p.weight);
    w.tensor(proj_name(p.step, "b"), p.bias);
  }
  w.close();
  if (ckpt.projections.K() > 0) {
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    side << ckpt.projections.sidecar().dump(2) << "\n";
    if (!side) throw IoError("cannot write sidecar '" + sidecar_path(path) + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path + "' has unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_json(nlohmann::json::parse(r.str(1u << 20)));
    ck.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has an unreadable config: " + e.what());
  } catch (const ParameterError& e) {
    throw IoError("checkpoint '" + path + "' has an invalid config: " + e.what());
  }

  const auto count = r.u32();
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (tensors.count(name)) throw IoError("checkpoint '" + path + "' repeats tensor '" + name + "'");
    order.push_back(name);
    tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw IoError("checkpoint '" + path + "' has trailing bytes");

  const auto expected = expected_shapes(ck.config);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    if (i >= order.size() || order[i] != name) throw IoError("checkpoint '" + path + "': expected tensor '" + name + "'");
    if (tensors.at(name).shape() != shape) {
      throw IoError("checkpoint '" + path + "': tensor '" + name + "' has shape " +
                    to_string(tensors.at(name).shape()) + ", expected " + to_string(shape));
    }
  }
  ck.weights = init_weights(ck.config, 0);
  ck.weights.for_each([&](const std::string& name, Tensor& t) { t = std::move(tensors.at(name)); });

  const std::size_t extra = order.size() - expected.size();
  if (extra == 0) return ck;
  if (extra % 2 != 0) throw IoError("checkpoint '" + path + "': unpaired projection tensors");
  std::ifstream side(sidecar_path(path));
  if (!side) throw IoError("checkpoint '" + path + "' holds projections but the sidecar is missing");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unreadable sidecar '" + sidecar_path(path) + "': " + e.what());
  }
  const int K = static_cast<int>(extra / 2);
  const auto layers = meta.at("layers").get<std::vector<int>>();
  if (meta.at("K").get<int>() != K || static_cast<int>(layers.size()) != K) {
    throw IoError("sidecar '" + sidecar_path(path) + "' disagrees with the checkpoint on K");
  }
  ck.projections.masked = meta.value("masked", false);
  for (int i = 1; i <= K; ++i) {
    const auto wn = proj_name(i, "W"), bn = proj_name(i, "b");
    if (!tensors.count(wn) || !tensors.count(bn)) throw IoError("checkpoint '" + path + "' lacks '" + wn + "'");
    ck.projections.projections.push_back({i, layers[i - 1], tensors.at(wn), tensors.at(bn)});
  }
  try {
    ck.projections.validate(ck.config);
  } catch (const Error& e) {
    throw IoError("checkpoint '" + path + "' has invalid projections: " + e.what());
  }
  return ck;
}

}  // namespace firp
