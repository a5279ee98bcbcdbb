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

// Tape-free math on float tensors.

#include <span>
#include <string_view>

#include "firp/tensor.hpp"

namespace firp {

// out[i,j] = Σ_p a[i,p]·b[p,j]
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-wise softmax over the last dimension.
Tensor softmax(const Tensor& x);

inline constexpr double kKlEpsilon = 1e-9;

// Σ p_i (log p_i − log max(q_i, ε)), with 0·log 0 := 0.
double kl_divergence(std::span<const float> p, std::span<const float> q, double eps = kKlEpsilon);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Argmax with ties broken by the lowest index.
int argmax(std::span<const float> row);

// Indices sorted by descending value, ties by ascending index.
std::vector<int> rank_order(std::span<const float> row);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
};

// One decoupled-weight-decay Adam update with bias correction. Throws
// TrainingError naming the parameter when the gradient is not finite.
void adamw_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamWConfig& cfg, std::string_view name);

}  // namespace firp
