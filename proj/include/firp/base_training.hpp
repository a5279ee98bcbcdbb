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

#include <cstdint>
#include <functional>
#include <vector>

#include "firp/graph.hpp"
#include "firp/model.hpp"
#include "firp/tensor_ops.hpp"

namespace firp {

struct BaseTrainConfig {
  int seq_len = 64;
  int batch_size = 8;
  int steps = 300;
  int warmup_steps = 20;
  double min_lr_ratio = 0.1;
  double grad_clip = 1.0;
  double init_std = 0.02;
  AdamWConfig adam{3e-3, 0.9, 0.95, 1e-8, 0.0};
  std::uint64_t seed = 1;
  std::function<void(int step, double loss)> on_step;
};

struct BaseTrainResult {
  ModelWeights weights;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
};

// Mean next-token cross-entropy of one window: rows 0..n-2 predict 1..n-1.
template <typename T>
ad::Var<T> window_lm_loss(TransformerGraph<T>& g, const std::vector<int>& window) {
  std::vector<int> inputs(window.begin(), window.end() - 1);
  std::vector<int> targets(window.begin() + 1, window.end());
  const int n = static_cast<int>(inputs.size());
  const auto spec = AttentionSpec::causal(n);
  auto x = g.embed(inputs, spec.position_ids);
  auto run = run_layers<T>(g, x, 0, g.config().n_layers, spec, nullptr, {});
  return ad::cross_entropy(g.logits(run.hidden), targets);
}

// Next-token training on a token stream with AdamW; deterministic for a seed.
BaseTrainResult train_base_model(const std::vector<int>& corpus, const ModelConfig& cfg, const BaseTrainConfig& hp);

// Mean next-token loss over up to max_windows consecutive windows.
double evaluate_lm_loss(const Model& model, const std::vector<int>& stream, int seq_len, int max_windows = 32);

// Scales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

}  // namespace firp
