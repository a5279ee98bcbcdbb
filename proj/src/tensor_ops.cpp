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

#include "firp/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "firp/autodiff.hpp"
#include "firp/kernels.hpp"

namespace firp {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  kernels::matmul<float>(a.values(), b.values(), out.values(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.cols() < 1) throw DimensionError("softmax: empty last dimension");
  return ad::softmax_rows(x);
}

double kl_divergence(std::span<const float> p, std::span<const float> q, double eps) {
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence: lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0f) continue;
    total += p[i] * (std::log(static_cast<double>(p[i])) - std::log(std::max(static_cast<double>(q[i]), eps)));
  }
  return total;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

int argmax(std::span<const float> row) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

std::vector<int> rank_order(std::span<const float> row) {
  std::vector<int> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
  return idx;
}

void adamw_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamWConfig& cfg, std::string_view name) {
  if (param.shape() != grad.shape()) {
    throw DimensionError("adamw: gradient " + to_string(grad.shape()) + " for parameter " + std::string(name) + " " +
                         to_string(param.shape()));
  }
  if (!grad.all_finite()) throw TrainingError("non-finite gradient for parameter " + std::string(name));
  if (state.m.shape() != param.shape()) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
    state.step = 0;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    double p = param[i];
    p -= cfg.lr * cfg.weight_decay * p;
    p -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    param[i] = static_cast<float>(p);
  }
}

}  // namespace firp
