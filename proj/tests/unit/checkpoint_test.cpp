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

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "firp/checkpoint.hpp"
#include "firp/errors.hpp"

namespace firp {
namespace {

namespace fs = std::filesystem;

struct CheckpointTest : ::testing::Test {
  fs::path dir = fs::temp_directory_path() / ("firp_ckpt_" + std::to_string(::getpid()));
  ModelConfig cfg = [] {
    ModelConfig c;
    c.vocab_size = 12;
    c.d_model = 8;
    c.n_layers = 3;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_seq_len = 32;
    return c;
  }();

  void SetUp() override { fs::create_directories(dir); }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const char* name) const { return (dir / name).string(); }

  std::vector<char> read_bytes(const std::string& p) const {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }
  void write_bytes(const std::string& p, const std::vector<char>& b) const {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  }
};

void expect_same(const ModelWeights& a, const ModelWeights& b) {
  std::vector<std::pair<std::string, Tensor>> ta, tb;
  a.for_each([&](const std::string& n, const Tensor& t) { ta.emplace_back(n, t); });
  b.for_each([&](const std::string& n, const Tensor& t) { tb.emplace_back(n, t); });
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].first, tb[i].first);
    EXPECT_TRUE(ta[i].second == tb[i].second) << ta[i].first;
  }
}

TEST_F(CheckpointTest, BareModelRoundTripIsBitwise) {
  for (auto pe : {PositionEncoding::kRotary, PositionEncoding::kLearned}) {
    cfg.position_encoding = pe;
    cfg.tie_embeddings = pe == PositionEncoding::kLearned;
    Checkpoint ck{cfg, init_weights(cfg, 9, 0.3), {}};
    save_checkpoint(path("m.bin"), ck);
    auto back = load_checkpoint(path("m.bin"));
    EXPECT_EQ(back.config.to_json(), cfg.to_json());
    EXPECT_EQ(back.projections.K(), 0);
    expect_same(back.weights, ck.weights);
    EXPECT_FALSE(fs::exists(sidecar_path(path("m.bin"))));
  }
}

TEST_F(CheckpointTest, HeaderLayout) {
  Checkpoint ck{cfg, init_weights(cfg, 1), {}};
  save_checkpoint(path("m.bin"), ck);
  auto b = read_bytes(path("m.bin"));
  ASSERT_GT(b.size(), 12u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "FIRP");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5] | b[6] | b[7], 0);
  const std::uint32_t len = std::uint8_t(b[8]) | std::uint8_t(b[9]) << 8 | std::uint8_t(b[10]) << 16;
  const auto json = nlohmann::json::parse(std::string(b.begin() + 12, b.begin() + 12 + len));
  EXPECT_EQ(json, cfg.to_json());
  // First tensor record: count, then the token embedding name.
  const std::size_t at = 12 + len + 4;
  const std::uint32_t name_len = std::uint8_t(b[at]);
  EXPECT_EQ(std::string(b.begin() + at + 4, b.begin() + at + 4 + name_len), "tok_embedding");
  // Payload size: header + every tensor.
  std::size_t expect = 12 + len + 4;
  ck.weights.for_each([&](const std::string& n, const Tensor& t) {
    expect += 4 + n.size() + 4 + 4 * t.shape().size() + 4 * t.numel();
  });
  EXPECT_EQ(b.size(), expect);
}

TEST_F(CheckpointTest, ProjectionsRoundTripWithSidecar) {
  ProjectionSet ps;
  ps.masked = true;
  ps.projections.push_back(init_projection(1, 1, 8, 4, 0.2));
  ps.projections.push_back(init_projection(2, 2, 8, 5, 0.2));
  Checkpoint ck{cfg, init_weights(cfg, 2), ps};
  save_checkpoint(path("f.bin"), ck);
  std::ifstream side(sidecar_path(path("f.bin")));
  auto meta = nlohmann::json::parse(side);
  EXPECT_EQ(meta["K"], 2);
  EXPECT_EQ(meta["layers"], nlohmann::json::array({1, 2}));
  auto back = load_checkpoint(path("f.bin"));
  ASSERT_EQ(back.projections.K(), 2);
  EXPECT_TRUE(back.projections.masked);
  for (int i = 1; i <= 2; ++i) {
    EXPECT_EQ(back.projections.step(i).layer, i);
    EXPECT_TRUE(back.projections.step(i).weight == ps.step(i).weight);
    EXPECT_TRUE(back.projections.step(i).bias == ps.step(i).bias);
  }
  expect_same(back.weights, ck.weights);
  fs::remove(sidecar_path(path("f.bin")));
  EXPECT_THROW(load_checkpoint(path("f.bin")), IoError);
}

TEST_F(CheckpointTest, RejectsCorruption) {
  Checkpoint ck{cfg, init_weights(cfg, 3), {}};
  save_checkpoint(path("m.bin"), ck);
  const auto good = read_bytes(path("m.bin"));

  auto bad = good;
  bad[4] = 2;
  write_bytes(path("v.bin"), bad);
  try {
    load_checkpoint(path("v.bin"));
    FAIL() << "unknown version accepted";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }

  bad = good;
  bad[0] = 'X';
  write_bytes(path("g.bin"), bad);
  EXPECT_THROW(load_checkpoint(path("g.bin")), IoError);

  bad.assign(good.begin(), good.end() - 5);
  write_bytes(path("t.bin"), bad);
  EXPECT_THROW(load_checkpoint(path("t.bin")), IoError);

  bad = good;
  bad.push_back(0);
  write_bytes(path("x.bin"), bad);
  EXPECT_THROW(load_checkpoint(path("x.bin")), IoError);

  EXPECT_THROW(load_checkpoint(path("missing.bin")), IoError);

  // Weights written for a different config must not load under this one.
  auto other = cfg;
  other.d_ff = 24;
  Checkpoint mismatched{cfg, init_weights(other, 3), {}};
  save_checkpoint(path("s.bin"), mismatched);
  EXPECT_THROW(load_checkpoint(path("s.bin")), IoError);
}

}  // namespace
}  // namespace firp
