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

// Training of the future-state projections. A training sequence holds the n
// real rows followed by one group of n pseudo rows per step (earlier frozen
// steps first). The pseudo row for source j at step i stands in for the
// state at position j+i, carries that position id, may see real rows up to
// j+i-1 and itself, and is supervised by the real distribution at j+i.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "firp/graph.hpp"
#include "firp/model.hpp"
#include "firp/projection.hpp"
#include "firp/tensor_ops.hpp"

namespace firp {

enum class PseudoVisibility {
  kCurriculum,  // step-i rows also see the same source's earlier-step rows
  kMasked,      // no pseudo-to-pseudo attention
};

// [2n, 2n] mask for a single step: real rows causal over real columns; the
// pseudo row of source j (1-based) sees real 1..min(j+i-1, n) and itself.
BoolMatrix training_attention_mask(int n, int step);

struct TrainingBatch {
  std::vector<int> tokens;
  int n = 0;
  int step = 1;
  int layer = 1;
  PseudoVisibility visibility = PseudoVisibility::kCurriculum;
  std::vector<int> group_steps;   // step of each pseudo group, in row order
  std::vector<int> group_layers;  // injection layer of each group
  AttentionSpec spec;             // rows: n real, then n per group; no cache columns
  // (pseudo row, supervising real row) for the trained step, j + step < n.
  std::vector<std::pair<int, int>> alignment;

  int pseudo_row(int group, int source) const { return n + group * n + source; }
};

TrainingBatch build_training_sequence(const std::vector<int>& tokens, const Projection& proj,
                                      const std::vector<Projection>& earlier,
                                      PseudoVisibility visibility = PseudoVisibility::kCurriculum);

// Σ KL(softmax(logits[pseudo]) ‖ softmax(logits[target])) over the alignment.
double firp_kl_loss(const Tensor& logits, const std::vector<std::pair<int, int>>& alignment);

// Tape version: gradients reach the pseudo rows only; targets are detached.
template <typename T>
ad::Var<T> firp_kl_loss(ad::Var<T> pseudo_logits, const BasicTensor<T>& target_logits) {
  return ad::kl_to_target(pseudo_logits, ad::softmax_rows(target_logits), static_cast<T>(kKlEpsilon));
}

template <typename T>
struct ProjectionVars {
  ad::Var<T> weight;
  ad::Var<T> bias;
};

// Forward of a training batch; returns the summed loss over supervised rows.
// params[g] are the projection variables of pseudo group g.
template <typename T>
ad::Var<T> firp_batch_loss(TransformerGraph<T>& g, const TrainingBatch& batch,
                           const std::vector<ProjectionVars<T>>& params) {
  if (batch.alignment.empty()) throw DataError("firp loss: no supervised rows");
  if (params.size() != batch.group_steps.size()) throw ContractError("firp loss: one projection per pseudo group");
  std::vector<int> real_pos(batch.spec.position_ids.begin(), batch.spec.position_ids.begin() + batch.n);
  auto x = g.embed(batch.tokens, real_pos);
  std::vector<Injection<T>> injections;
  std::vector<int> sources(batch.n);
  for (int j = 0; j < batch.n; ++j) sources[j] = j;
  for (std::size_t grp = 0; grp < params.size(); ++grp) {
    injections.push_back({batch.group_layers[grp], params[grp].weight, params[grp].bias, sources, std::nullopt});
  }
  auto run = run_layers<T>(g, x, 0, g.config().n_layers, batch.spec, nullptr, std::move(injections));
  std::vector<int> pseudo_rows, target_rows;
  for (auto [p, t] : batch.alignment) {
    pseudo_rows.push_back(p);
    target_rows.push_back(t);
  }
  auto pseudo_logits = g.logits(ad::gather_rows(run.hidden, pseudo_rows));
  auto target_logits = g.logits(ad::gather_rows(run.hidden, target_rows)).value();
  return firp_kl_loss(pseudo_logits, target_logits);
}

struct FirpTrainConfig {
  int seq_len = 64;
  int epochs = 2;
  int batch_size = 4;
  double grad_clip = 1.0;
  double init_noise = 0.01;
  AdamWConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.0};
  std::uint64_t seed = 1;
  PseudoVisibility visibility = PseudoVisibility::kCurriculum;
  std::function<void(int step, double loss)> on_step;
};

struct ProjectionTrainResult {
  Projection projection;
  std::vector<double> losses;  // mean KL per supervised row, per optimizer step
};

// Non-overlapping windows of seq_len tokens; the tail is dropped.
std::vector<std::vector<int>> chunk_windows(const std::vector<int>& stream, int seq_len);

// Trains one step's projection against the frozen model and frozen earlier
// steps (which must be exactly steps 1..i-1).
ProjectionTrainResult train_projection(const Model& model, const std::vector<int>& corpus, Projection init,
                                       const std::vector<Projection>& earlier, const FirpTrainConfig& cfg);

// Mean KL per supervised row over consecutive windows of a held-out stream.
double evaluate_firp_loss(const Model& model, const std::vector<int>& stream, const Projection& proj,
                          const std::vector<Projection>& earlier, PseudoVisibility visibility, int seq_len,
                          int max_windows = 32);

}  // namespace firp
