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

// Speculative decoding with projected future states. Each round forwards
// the pending token (the root) plus a draft tree in one pass, accepts the
// longest path that agrees with greedy decoding, and commits the accepted
// tokens plus one bonus token. Output always equals greedy decoding.

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "firp/model.hpp"
#include "firp/projection.hpp"
#include "firp/tree.hpp"

namespace firp {

enum class DraftMode {
  kFused,    // pseudo rows ride along in the verification forward
  kTwoPass,  // separate draft forward from retained hidden states
};

struct DecodeMetrics {
  long forward_count = 0;
  long emitted = 0;
  std::vector<long> accept_histogram;  // index = accepted drafts in a forward
  std::vector<long> step_hits;         // per step: top-1 draft equal to the greedy token
  std::vector<long> step_trials;

  double mean_acceptance() const { return forward_count ? double(emitted) / forward_count : 0.0; }
  double step_accuracy(int step) const;
  void record_forward(int accepted);
  void merge(const DecodeMetrics& other);
  nlohmann::json to_json() const;
};

// Draft distributions for the steps after the pending token, computed from
// the pseudo states of the position that produced it.
struct StepDistributions {
  Tensor probs;             // [available steps, vocab]
  int source_position = 0;  // position of the state the pseudo rows project from
  std::vector<int> top1() const;
  int available() const { return probs.rows(); }
};

// Retained layer-t_i states of one position, one [1, d] row per projection.
struct SourceStates {
  std::vector<Tensor> per_step;
  int position = 0;
};

// Two-pass drafting: injects projection i's pseudo state at layer t_i,
// forwards layers t_1..L over the cache without writing to it. Step i sits
// at position source + i and sees the cache, earlier steps (unless masked)
// and itself. Steps whose position would exceed max_seq_len are dropped.
StepDistributions compute_step_distributions(const Model& model, const ProjectionSet& proj, const KvCache& cache,
                                             const SourceStates& source);

struct RoundResult {
  std::vector<int> accepted_rows;  // tree-batch rows, root excluded, root-to-leaf
  std::vector<int> emitted;        // accepted tokens then the bonus, after truncation
  int bonus = 0;
};

class DecodeSession {
 public:
  DecodeSession(const Model& model, const ProjectionSet& proj, DraftMode mode = DraftMode::kFused);

  // Forwards the prompt; emits the first greedy token (one forward).
  int prefill(const std::vector<int>& prompt);

  // One verification forward with the template; emits at most `budget`
  // tokens (surplus is truncated).
  RoundResult round(const TreeTemplate& tmpl, int budget);

  const std::vector<int>& tokens() const { return tokens_; }
  const KvCache& cache() const { return cache_; }
  const StepDistributions& distributions() const { return dists_; }
  // Replaces the drafts used by the next round (probing and tests).
  void set_distributions(StepDistributions d) { dists_ = std::move(d); }
  int pending() const { return tokens_.back(); }
  DecodeMetrics& metrics() { return metrics_; }
  const DecodeMetrics& metrics() const { return metrics_; }

  // Scores recorded top-1 drafts against `truth` (the full greedy output).
  void score_drafts(const std::vector<int>& truth);

 private:
  struct DraftRecord {
    int pending_position;
    std::vector<int> top1;
  };

  StepDistributions draft_from(const SourceStates& src) const;

  const Model* model_;
  const ProjectionSet* proj_;
  DraftMode mode_;
  KvCache cache_;
  std::vector<int> tokens_;
  StepDistributions dists_;
  DecodeMetrics metrics_;
  std::vector<DraftRecord> drafts_;
};

struct DecodeResult {
  std::vector<int> tokens;  // prompt + generated
  DecodeMetrics metrics;
};

class SpeculativeDecoder {
 public:
  SpeculativeDecoder(const Model& model, ProjectionSet proj, DraftMode mode = DraftMode::kFused);

  DecodeResult decode(const std::vector<int>& prompt, int max_new_tokens, const TreeTemplate& tmpl) const;

  const ProjectionSet& projections() const { return proj_; }

 private:
  const Model* model_;
  ProjectionSet proj_;
  DraftMode mode_;
};

}  // namespace firp
