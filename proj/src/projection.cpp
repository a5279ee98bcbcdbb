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

#include "firp/projection.hpp"

#include <random>

#include "firp/tensor_ops.hpp"

namespace firp {

Projection init_projection(int step, int layer, int d_model, std::uint64_t seed, double noise) {
  Projection p{step, layer, Tensor::identity(d_model), Tensor({d_model})};
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, static_cast<float>(noise));
  if (noise > 0.0) {
    for (auto& v : p.weight.values()) v += dist(rng);
  }
  return p;
}

PseudoHidden predict_pseudo(const HiddenMatrix& h, const Projection& proj) {
  if (h.layer_index != proj.layer) {
    throw ContractError("predict_pseudo: hidden states at layer " + std::to_string(h.layer_index) +
                        " but projection " + std::to_string(proj.step) + " reads layer " + std::to_string(proj.layer));
  }
  const int d = proj.weight.rows();
  if (h.values.rank() != 2 || h.values.cols() != d) {
    throw DimensionError("predict_pseudo: hidden " + to_string(h.values.shape()) + " vs weight " +
                         to_string(proj.weight.shape()));
  }
  Tensor wt({d, d});
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) wt(c, r) = proj.weight(r, c);
  }
  PseudoHidden out{matmul(h.values, wt), proj.layer, proj.step};
  for (int r = 0; r < out.values.rows(); ++r) {
    auto row = out.values.row(r);
    for (int c = 0; c < d; ++c) row[c] += proj.bias[c];
  }
  return out;
}

std::vector<int> ProjectionSet::layers() const {
  std::vector<int> out;
  for (const auto& p : projections) out.push_back(p.layer);
  return out;
}

void ProjectionSet::validate(const ModelConfig& cfg) const {
  const int d = cfg.d_model;
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const auto& p = projections[i];
    if (p.step != static_cast<int>(i) + 1) throw ContractError("projection steps must be 1..K in order");
    if (p.layer < 1 || p.layer > cfg.n_layers - 1) {
      throw ParameterError("projection layer " + std::to_string(p.layer) + " outside [1, " +
                           std::to_string(cfg.n_layers - 1) + "]");
    }
    if (i > 0 && p.layer <= projections[i - 1].layer) {
      throw ParameterError("projection layers must be strictly increasing with the step");
    }
    if (p.weight.shape() != Shape{d, d} || p.bias.shape() != Shape{d}) {
      throw DimensionError("projection " + std::to_string(p.step) + " has shapes " + to_string(p.weight.shape()) +
                           " / " + to_string(p.bias.shape()));
    }
    if (!p.weight.all_finite() || !p.bias.all_finite()) {
      throw TrainingError("projection " + std::to_string(p.step) + " holds non-finite values");
    }
  }
}

nlohmann::json ProjectionSet::sidecar() const { return {{"K", K()}, {"layers", layers()}, {"masked", masked}}; }

}  // namespace firp
