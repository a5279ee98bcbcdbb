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

#include "firp/tree_search.hpp"

#include <algorithm>
#include <random>

#include "firp/decode.hpp"
#include "firp/errors.hpp"
#include "firp/tensor_ops.hpp"

namespace firp {

double AccuracyTable::at(int step, int rank) const {
  if (step < 1 || step > K() || rank < 1 || rank > max_rank()) {
    throw TableError("accuracy table has no entry for step " + std::to_string(step) + ", rank " +
                     std::to_string(rank) + " (K=" + std::to_string(K()) + ", max rank " +
                     std::to_string(max_rank()) + ")");
  }
  return a[step - 1][rank - 1];
}

void AccuracyTable::validate() const {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != a.front().size()) throw TableError("accuracy table rows differ in length");
    double sum = 0;
    for (double v : a[i]) {
      if (!(v >= 0.0 && v <= 1.0)) throw TableError("accuracy outside [0, 1] at step " + std::to_string(i + 1));
      sum += v;
    }
    if (sum > 1.0 + 1e-9) throw TableError("accuracies of step " + std::to_string(i + 1) + " sum above 1");
  }
}

nlohmann::json AccuracyTable::to_json() const { return {{"accuracy", a}, {"sample_count", sample_count}}; }

AccuracyTable AccuracyTable::from_json(const nlohmann::json& j) {
  AccuracyTable t;
  try {
    t.a = j.at("accuracy").get<std::vector<std::vector<double>>>();
    t.sample_count = j.value("sample_count", 0L);
  } catch (const nlohmann::json::exception& e) {
    throw TableError(std::string("malformed accuracy table: ") + e.what());
  }
  t.validate();
  return t;
}

std::vector<ProbePoint> sample_probe_points(const Model& model, const std::vector<int>& stream, int K,
                                            const ProbeConfig& cfg) {
  if (stream.empty()) throw DataError("probe sampling: empty stream");
  if (cfg.seq_len < 2 || cfg.min_prefix < 1 || cfg.min_prefix > cfg.seq_len) {
    throw ParameterError("probe sampling: need 1 <= min_prefix <= seq_len");
  }
  if (static_cast<int>(stream.size()) < cfg.seq_len) throw DataError("probe sampling: stream shorter than seq_len");
  if (cfg.seq_len + K + 1 > model.config().max_seq_len) throw ParameterError("probe sampling: seq_len + K + 1 too long");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> start(0, stream.size() - static_cast<std::size_t>(cfg.seq_len));
  std::uniform_int_distribution<int> split(cfg.min_prefix, cfg.seq_len);
  std::vector<ProbePoint> points;
  for (int s = 0; s < cfg.sequences; ++s) {
    const std::size_t at = start(rng);
    for (int p = 0; p < cfg.points_per_sequence; ++p) {
      const int n = split(rng);
      ProbePoint pt;
      pt.prefix.assign(stream.begin() + static_cast<std::ptrdiff_t>(at),
                       stream.begin() + static_cast<std::ptrdiff_t>(at) + n);
      auto gen = model.autoregressive_generate(pt.prefix, K + 1);
      pt.truth.assign(gen.begin() + n, gen.end());
      points.push_back(std::move(pt));
    }
  }
  return points;
}

Drafter firp_drafter(const Model& model, const ProjectionSet& proj) {
  return [&model, &proj](const std::vector<int>& prefix) {
    DecodeSession s(model, proj, DraftMode::kFused);
    s.prefill(prefix);
    return s.distributions().probs;
  };
}

AccuracyTable tabulate_ranks(const std::vector<ProbePoint>& points, const Drafter& drafter, int K, int max_rank) {
  if (points.empty()) throw DataError("tabulate_ranks: no probe points");
  if (K < 1 || max_rank < 1) throw ParameterError("tabulate_ranks: K and max_rank must be >= 1");
  std::vector<std::vector<long>> counts(static_cast<std::size_t>(K), std::vector<long>(max_rank, 0));
  for (const auto& pt : points) {
    const Tensor scores = drafter(pt.prefix);
    if (scores.rows() < K) throw ContractError("drafter returned fewer than K step rows");
    for (int i = 1; i <= K; ++i) {
      const auto order = rank_order(scores.row(i - 1));
      for (int r = 0; r < max_rank && r < static_cast<int>(order.size()); ++r) {
        if (order[r] == pt.truth.at(i)) {
          ++counts[i - 1][r];
          break;
        }
      }
    }
  }
  AccuracyTable t;
  t.sample_count = static_cast<long>(points.size());
  for (const auto& row : counts) {
    std::vector<double> acc;
    for (long c : row) acc.push_back(double(c) / points.size());
    t.a.push_back(std::move(acc));
  }
  return t;
}

AccuracyTable calibrate_accuracies(const Model& model, const ProjectionSet& proj, const std::vector<int>& eval_stream,
                                   const ProbeConfig& cfg, int max_rank) {
  if (eval_stream.empty()) throw DataError("calibrate: empty evaluation stream");
  const auto points = sample_probe_points(model, eval_stream, proj.K(), cfg);
  return tabulate_ranks(points, firp_drafter(model, proj), proj.K(), max_rank);
}

double expected_acceptance(const TreeTemplate& tmpl, const AccuracyTable& table) {
  std::vector<double> path(tmpl.nodes.size(), 0.0);
  double total = 0.0;
  for (int v : tmpl.topological_order()) {
    const auto& n = tmpl.nodes[v];
    const double parent = n.parent == kRootParent ? 1.0 : path[n.parent];
    path[v] = parent * table.at(n.step, n.rank);
    total += path[v];
  }
  return total;
}

TreeTemplate greedy_tree_search(const AccuracyTable& table, int node_budget) {
  if (node_budget < 1) throw ParameterError("tree search budget must be >= 1");
  table.validate();
  TreeTemplate t;
  std::vector<double> path;
  // next unused rank under each parent; index 0 is the root
  std::vector<std::vector<bool>> used(1, std::vector<bool>(table.max_rank(), false));
  auto step_of = [&](int parent) { return parent == kRootParent ? 0 : t.nodes[parent].step; };
  while (t.size() < node_budget) {
    double best = 0.0;
    int best_parent = 0, best_rank = 0, best_step = 0;
    bool found = false;
    for (int p = kRootParent; p < t.size(); ++p) {
      const int step = step_of(p) + 1;
      if (step > table.K()) continue;
      const double base = p == kRootParent ? 1.0 : path[p];
      for (int r = 1; r <= table.max_rank(); ++r) {
        if (used[p + 1][r - 1]) continue;
        const double score = base * table.at(step, r);
        if (score <= 0.0) continue;
        const bool better = !found || score > best ||
                            (score == best && (step < best_step || (step == best_step && r < best_rank)));
        if (better) {
          found = true;
          best = score;
          best_parent = p;
          best_rank = r;
          best_step = step;
        }
      }
    }
    if (!found) break;
    used[best_parent + 1][best_rank - 1] = true;
    t.nodes.push_back({best_step, best_rank, best_parent});
    path.push_back(best);
    used.emplace_back(table.max_rank(), false);
  }
  return t;
}

}  // namespace firp
