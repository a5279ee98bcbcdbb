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

// Experiment drivers: acceptance evaluation, pseudo-state refinement probes,
// injection-layer sweeps, the pseudo-visibility ablation and the head
// baselines. Every driver returns an ExperimentReport.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "firp/decode.hpp"
#include "firp/firp_train.hpp"
#include "firp/model.hpp"
#include "firp/projection.hpp"
#include "firp/tree.hpp"
#include "firp/tree_search.hpp"

namespace firp {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ExperimentReport {
  std::string name;
  nlohmann::json config = nlohmann::json::object();
  std::vector<Series> series;
  std::uint64_t seed = 0;
  std::vector<std::string> notes;
  nlohmann::json extra = nlohmann::json::object();
  // Wall-clock figures; kept out of payload() so reruns compare equal.
  nlohmann::json timing = nlohmann::json::object();

  // Throws DataError on an empty series or mismatched x/y lengths.
  void validate() const;
  const Series& get(const std::string& series_name) const;
  nlohmann::json payload() const;
  nlohmann::json to_json() const;
  // One "series,x,y" line per point.
  std::string to_csv() const;
};

// Probe points are drawn once per seed; every method is scored on the same
// points and the per-seed tables are averaged.
struct ProbeProtocol {
  ProbeConfig probe;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int max_rank = kDefaultMaxRank;

  nlohmann::json to_json() const;
};

using ProbeSets = std::vector<std::vector<ProbePoint>>;

ProbeSets protocol_points(const Model& model, const std::vector<int>& stream, int K, const ProbeProtocol& protocol);
AccuracyTable averaged_table(const ProbeSets& sets, const Drafter& drafter, int K, int max_rank);

// `count` random windows of `length` tokens.
std::vector<std::vector<int>> sample_prompts(const std::vector<int>& stream, int count, int length,
                                             std::uint64_t seed);

// --- acceptance ---------------------------------------------------------

struct AcceptConfig {
  int max_new = 64;
  DraftMode mode = DraftMode::kFused;
  bool autoregressive = false;  // plain greedy decoding, one token per forward
};

struct AcceptEval {
  DecodeMetrics metrics;
  std::vector<std::vector<int>> outputs;  // prompt + generated, per prompt
  double seconds = 0.0;

  double tokens_per_forward() const { return metrics.mean_acceptance(); }
  double mean_accepted() const { return metrics.mean_acceptance() - 1.0; }
};

AcceptEval eval_accept(const Model& model, const ProjectionSet& proj, const TreeTemplate& tmpl,
                       const std::vector<std::vector<int>>& prompts, const AcceptConfig& cfg);

// Adds published figures for a much larger host model as non-binding
// context next to the measured numbers.
ExperimentReport accept_report(const AcceptEval& eval, const TreeTemplate& tmpl, const AcceptConfig& cfg,
                               std::uint64_t seed);

// --- refinement ---------------------------------------------------------

// For every step i, the cosine similarity between the pseudo state and the
// real hidden state of the future token it stands for, at each layer
// t_i..n_layers. Entry [i-1][t - t_i].
std::vector<std::vector<double>> refine_trajectory(const Model& model, const ProjectionSet& proj,
                                                   const ProbePoint& point);

ExperimentReport probe_refine(const Model& model, const ProjectionSet& proj, const ProbeSets& sets);

// --- layer sweep and ablation -------------------------------------------

struct StudyConfig {
  FirpTrainConfig train;
  ProbeProtocol protocol;
  int eval_windows = 32;  // held-out windows for the KL column
};

// Trains a step-`step` projection at each candidate layer on top of the
// frozen `earlier` projections (steps 1..step-1) and reports its top-1
// accuracy. Candidates must lie in (last earlier layer, n_layers).
ExperimentReport sweep_layers(const Model& model, const std::vector<int>& train_stream,
                              const std::vector<int>& eval_stream, std::vector<int> candidate_layers, int step,
                              const std::vector<Projection>& earlier, const StudyConfig& cfg);

struct MaskDiff {
  long differing = 0;
  bool pseudo_only = true;  // every differing cell is pseudo row -> pseudo column
};

// Lays the masked-arm sequence out in the curriculum arm's row order and
// compares the two masks cell by cell.
MaskDiff training_mask_diff(const std::vector<int>& tokens, const Projection& proj,
                            const std::vector<Projection>& earlier);

struct AblationResult {
  ExperimentReport report;
  Projection no_masked;
  Projection masked;
};

// Trains step 2 twice from the same initialization, data order and seed,
// once with and once without visibility of the step-1 pseudo rows.
AblationResult ablate_mask(const Model& model, const std::vector<int>& train_stream,
                           const std::vector<int>& eval_stream, const Projection& step1, int layer2,
                           const StudyConfig& cfg);

// --- baselines ----------------------------------------------------------

enum class BaselineKind { kMedusaHead, kEarlyExit };

std::string to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(const std::string& name);

// Vocabulary head reading the layer-`layer` state of a position and scoring
// the step-`step` token: logits = rmsnorm(h) · weightᵀ + bias.
struct PredictionHead {
  int step = 1;
  int layer = 0;  // hidden index in [1, n_layers]
  Tensor weight;  // [V, d]
  Tensor bias;    // [V]
};

// Heads start from the model's own output map (final-norm gain folded in).
PredictionHead init_head(const Model& model, int step, int layer);

// Trains one head per step with the same KL objective, optimizer and data
// order as the projections. medusa_head reads the final layer; early_exit
// reads layers[i-1].
std::vector<PredictionHead> train_heads(BaselineKind kind, const Model& model, const std::vector<int>& train_stream,
                                        int K, const std::vector<int>& layers, const FirpTrainConfig& cfg);

Drafter head_drafter(const Model& model, const std::vector<PredictionHead>& heads);

struct MethodTable {
  std::string method;
  AccuracyTable table;
};

// Cumulative top-1..top-max_rank accuracy per step per method, one series
// each ("<method>.step<i>").
ExperimentReport compare_methods(const std::vector<MethodTable>& tables, const ProbeProtocol& protocol);

}  // namespace firp
