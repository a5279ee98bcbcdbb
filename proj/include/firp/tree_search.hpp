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

#pragma once

// Per-step, per-rank draft accuracies and the node-budgeted tree search
// built on them. Acceptance of a node is modelled as the product of the
// accuracies along its path.

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "firp/model.hpp"
#include "firp/projection.hpp"
#include "firp/tree.hpp"

namespace firp {

inline constexpr int kDefaultMaxRank = 10;

struct AccuracyTable {
  std::vector<std::vector<double>> a;  // [step - 1][rank - 1]
  long sample_count = 0;

  int K() const { return static_cast<int>(a.size()); }
  int max_rank() const { return a.empty() ? 0 : static_cast<int>(a.front().size()); }
  // Throws TableError when (step, rank) is outside the table.
  double at(int step, int rank) const;
  // Entries in [0, 1], each step's row sums to at most 1 + 1e-9.
  void validate() const;

  nlohmann::json to_json() const;
  static AccuracyTable from_json(const nlohmann::json& j);
};

// A split point: the prefix, and the model's greedy continuation after it.
// truth[0] is the next token; truth[i] is what the step-i draft predicts.
struct ProbePoint {
  std::vector<int> prefix;
  std::vector<int> truth;  // K + 1 tokens
};

struct ProbeConfig {
  int sequences = 20;
  int seq_len = 64;
  int points_per_sequence = 10;
  int min_prefix = 8;
  std::uint64_t seed = 1;
};

// Samples windows of the stream, then split points inside each window, and
// runs greedy decoding for the K+1 tokens after each split.
std::vector<ProbePoint> sample_probe_points(const Model& model, const std::vector<int>& stream, int K,
                                            const ProbeConfig& cfg);

// Returns one score row per step (probabilities or logits; only the order
// matters) for the tokens after prefix's greedy next token.
using Drafter = std::function<Tensor(const std::vector<int>& prefix)>;

Drafter firp_drafter(const Model& model, const ProjectionSet& proj);

// Counts, per step, how often the truth token sits at rank 1..max_rank.
AccuracyTable tabulate_ranks(const std::vector<ProbePoint>& points, const Drafter& drafter, int K,
                             int max_rank = kDefaultMaxRank);

AccuracyTable calibrate_accuracies(const Model& model, const ProjectionSet& proj, const std::vector<int>& eval_stream,
                                   const ProbeConfig& cfg, int max_rank = kDefaultMaxRank);

double expected_acceptance(const TreeTemplate& tmpl, const AccuracyTable& table);

// Best-first growth: repeatedly adds the frontier child with the largest
// path probability (ties: lower step, lower rank, earlier parent) until the
// budget is spent or no child has positive probability.
TreeTemplate greedy_tree_search(const AccuracyTable& table, int node_budget);

}  // namespace firp
