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
#include <vector>

#include <nlohmann/json.hpp>

#include "firp/model.hpp"
#include "firp/tensor.hpp"

namespace firp {

// Linear map predicting the layer-`layer` state of the token `step`
// positions ahead: pseudo_j = weight · h_j + bias.
struct Projection {
  int step = 1;   // 1-based
  int layer = 1;  // hidden index in [1, n_layers - 1]
  Tensor weight;  // [d, d]
  Tensor bias;    // [d]
};

// Identity plus N(0, noise) weight, zero bias.
Projection init_projection(int step, int layer, int d_model, std::uint64_t seed, double noise = 0.01);

// Pseudo states for step `step`, living at hidden index `layer_index`.
struct PseudoHidden {
  Tensor values;
  int layer_index = 0;
  int step = 1;
};

// Row j of the result is weight · h_j + bias. Throws ContractError when h
// is not taken at the projection's layer.
PseudoHidden predict_pseudo(const HiddenMatrix& h, const Projection& proj);

struct ProjectionSet {
  std::vector<Projection> projections;  // ordered by step
  // Step-i pseudo rows cannot see earlier-step pseudo rows.
  bool masked = false;

  int K() const { return static_cast<int>(projections.size()); }
  const Projection& step(int i) const { return projections.at(static_cast<std::size_t>(i - 1)); }
  std::vector<int> layers() const;

  // Steps 1..K present in order, layers strictly increasing inside
  // [1, n_layers - 1], shapes [d, d] / [d], finite values.
  void validate(const ModelConfig& cfg) const;

  // {"K": .., "layers": [t_1..t_K], "masked": ..}
  nlohmann::json sidecar() const;
};

}  // namespace firp
