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

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "firp/errors.hpp"
#include "firp/tree_search.hpp"
#include "test_util.hpp"

namespace firp {
namespace {

AccuracyTable worked_table() {
  AccuracyTable t;
  t.a = {{0.6, 0.2}, {0.5, 0.0}};
  return t;
}

AccuracyTable random_table(std::mt19937_64& rng, int K, int J) {
  AccuracyTable t;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < K; ++i) {
    std::vector<double> row(J);
    double sum = 0;
    for (auto& v : row) sum += (v = u(rng) * u(rng));
    const double mass = u(rng);
    for (auto& v : row) v *= mass / sum;
    t.a.push_back(row);
  }
  return t;
}

// Nodes are identified by their rank path; a template is a prefix-closed set.
using Path = std::vector<int>;

TreeTemplate from_paths(const std::set<Path>& paths) {
  std::vector<Path> ordered(paths.begin(), paths.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const Path& a, const Path& b) { return a.size() < b.size(); });
  std::map<Path, int> index;
  TreeTemplate t;
  for (const auto& p : ordered) {
    const Path parent(p.begin(), p.end() - 1);
    index[p] = t.size();
    t.nodes.push_back({static_cast<int>(p.size()), p.back(), parent.empty() ? kRootParent : index.at(parent)});
  }
  return t;
}

void enumerate(std::set<Path>& current, int budget, int K, int J, std::set<std::set<Path>>& seen,
               double& best, const AccuracyTable& table) {
  if (!seen.insert(current).second) return;
  best = std::max(best, expected_acceptance(from_paths(current), table));
  if (static_cast<int>(current.size()) == budget) return;
  std::vector<Path> parents{{}};
  for (const auto& p : current) parents.push_back(p);
  for (const auto& parent : parents) {
    if (static_cast<int>(parent.size()) >= K) continue;
    for (int r = 1; r <= J; ++r) {
      Path child = parent;
      child.push_back(r);
      if (current.count(child)) continue;
      current.insert(child);
      enumerate(current, budget, K, J, seen, best, table);
      current.erase(child);
    }
  }
}

double exhaustive_optimum(const AccuracyTable& table, int budget) {
  std::set<Path> current;
  std::set<std::set<Path>> seen;
  double best = 0.0;
  enumerate(current, budget, table.K(), table.max_rank(), seen, best, table);
  return best;
}

TEST(ExpectedAcceptance, WorkedExample) {
  auto t = worked_table();
  EXPECT_EQ(expected_acceptance(TreeTemplate{}, t), 0.0);
  EXPECT_DOUBLE_EQ(expected_acceptance(TreeTemplate::chain(1), t), 0.6);
  TreeTemplate siblings{{{1, 1, kRootParent}, {1, 2, kRootParent}}};
  EXPECT_NEAR(expected_acceptance(siblings, t), 0.8, 1e-12);
  EXPECT_NEAR(expected_acceptance(TreeTemplate::chain(2), t), 0.9, 1e-12);
  EXPECT_NEAR(exhaustive_optimum(t, 2), 0.9, 1e-12);
  TreeTemplate overflow{{{1, 3, kRootParent}}};
  EXPECT_THROW(expected_acceptance(overflow, t), TableError);
}

TEST(GreedySearch, WorkedExampleAndBudgetOne) {
  auto t = worked_table();
  EXPECT_EQ(greedy_tree_search(t, 1), TreeTemplate::chain(1));
  EXPECT_EQ(greedy_tree_search(t, 2), TreeTemplate::chain(2));
  EXPECT_THROW(greedy_tree_search(t, 0), ParameterError);
}

TEST(GreedySearch, NearExhaustiveOptimum) {
  std::mt19937_64 rng(40);
  for (int seed = 0; seed < 10; ++seed) {
    auto table = random_table(rng, 3, 4);
    for (int budget = 1; budget <= 4; ++budget) {
      const auto tmpl = greedy_tree_search(table, budget);
      ASSERT_NO_THROW(tmpl.validate());
      EXPECT_LE(tmpl.size(), budget);
      const double greedy = expected_acceptance(tmpl, table);
      const double opt = exhaustive_optimum(table, budget);
      EXPECT_GE(greedy, 0.95 * opt) << "seed " << seed << " budget " << budget;
      EXPECT_GE(greedy + 1e-12, expected_acceptance(TreeTemplate::chain(std::min(budget, 3)), table));
    }
  }
}

TEST(GreedySearch, DeterministicAndMonotone) {
  std::mt19937_64 rng(41);
  auto table = random_table(rng, 3, 10);
  EXPECT_EQ(greedy_tree_search(table, 16), greedy_tree_search(table, 16));
  auto t = greedy_tree_search(table, 32);
  double prev = 0.0;
  TreeTemplate grow;
  for (const auto& n : t.nodes) {
    grow.nodes.push_back(n);
    const double now = expected_acceptance(grow, table);
    EXPECT_GE(now, prev);
    prev = now;
  }
}

TEST(GreedySearch, ChainOnlyTable) {
  AccuracyTable t;
  t.a = {{0.7, 0, 0}, {0.5, 0, 0}, {0.4, 0, 0}};
  EXPECT_EQ(greedy_tree_search(t, 16), TreeTemplate::chain(3));
  EXPECT_EQ(greedy_tree_search(t, 2), TreeTemplate::chain(2));
}

TEST(AccuracyTableTest, JsonAndValidation) {
  auto t = worked_table();
  t.sample_count = 5;
  auto back = AccuracyTable::from_json(t.to_json());
  EXPECT_EQ(back.a, t.a);
  EXPECT_EQ(back.sample_count, 5);
  AccuracyTable bad;
  bad.a = {{0.8, 0.5}};
  EXPECT_THROW(bad.validate(), TableError);
}

struct ProbeFixture : ::testing::Test {
  ModelConfig cfg = [] {
    ModelConfig c;
    c.vocab_size = 8;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq_len = 64;
    return c;
  }();
  Model model{cfg, init_weights(cfg, 3, 0.4)};
  std::vector<int> stream = [] {
    std::vector<int> s;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 400; ++i) s.push_back(static_cast<int>(rng() % 8));
    return s;
  }();
};

TEST_F(ProbeFixture, ProbePointsCarryGreedyTruth) {
  ProbeConfig pc{3, 20, 4, 4, 9};
  auto pts = sample_probe_points(model, stream, 3, pc);
  ASSERT_EQ(pts.size(), 12u);
  for (const auto& p : pts) {
    ASSERT_EQ(p.truth.size(), 4u);
    auto gen = model.autoregressive_generate(p.prefix, 4);
    EXPECT_EQ(std::vector<int>(gen.end() - 4, gen.end()), p.truth);
  }
  EXPECT_THROW(sample_probe_points(model, {}, 3, pc), DataError);
}

TEST_F(ProbeFixture, OracleDrafterIsPerfect) {
  ProbeConfig pc{4, 20, 5, 4, 2};
  auto pts = sample_probe_points(model, stream, 3, pc);
  // Copies the true future: score rows come from the real forward of the
  // greedy continuation.
  Drafter oracle = [&](const std::vector<int>& prefix) {
    auto gen = model.autoregressive_generate(prefix, 3);
    KvCache cache(cfg);
    auto logits = model.forward_tokens(gen, cache);
    Tensor rows({3, 8});
    for (int i = 0; i < 3; ++i)
      for (int v = 0; v < 8; ++v) rows(i, v) = logits(static_cast<int>(prefix.size()) + i, v);
    return rows;
  };
  auto t = tabulate_ranks(pts, oracle, 3, 5);
  for (int i = 1; i <= 3; ++i) EXPECT_DOUBLE_EQ(t.at(i, 1), 1.0);
}

TEST_F(ProbeFixture, RandomDrafterIsUniformOverRanks) {
  ProbeConfig pc{10, 20, 10, 4, 3};
  auto pts = sample_probe_points(model, stream, 2, pc);
  std::mt19937_64 rng(77);
  Drafter noise = [&](const std::vector<int>&) { return testing::random_tensor({2, 8}, rng); };
  // Several seeds pooled: each cell is a binomial mean with p = 1/8. The
  // per-cell bound is 3 sigma widened for the 16 cells tested together.
  AccuracyTable pooled;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    auto t = tabulate_ranks(pts, noise, 2, 8);
    if (pooled.a.empty()) pooled.a.assign(2, std::vector<double>(8, 0.0));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 8; ++j) pooled.a[i][j] += t.a[i][j] / seeds;
  }
  const double n = double(pts.size()) * seeds, p = 1.0 / 8;
  const double sigma = std::sqrt(p * (1 - p) / n);
  for (int i = 0; i < 2; ++i) {
    double sum = 0;
    for (int j = 0; j < 8; ++j) {
      EXPECT_NEAR(pooled.a[i][j], p, 4 * sigma);
      sum += pooled.a[i][j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST_F(ProbeFixture, CalibrationRowsArePartitions) {
  ProjectionSet proj;
  for (int i = 1; i <= 1; ++i) proj.projections.push_back(init_projection(i, i, 16, 5));
  auto t = calibrate_accuracies(model, proj, stream, ProbeConfig{4, 20, 5, 4, 1}, 10);
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.sample_count, 20);
  EXPECT_THROW(calibrate_accuracies(model, proj, {}, ProbeConfig{}, 10), DataError);
}

}  // namespace
}  // namespace firp
