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

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "firp/autodiff.hpp"
#include "firp/tensor.hpp"

namespace firp::testing {

template <typename T = float>
BasicTensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  BasicTensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

inline std::vector<int> random_ints(std::mt19937_64& rng, int n, int vocab) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& x : t) x = static_cast<int>(rng() % static_cast<unsigned>(vocab));
  return t;
}

using DoubleLoss = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

// Largest |analytic − numeric| over all inputs, divided by the largest
// |numeric| entry (floored at 1e-6). Central differences with step delta.
inline double gradient_check(const std::vector<TensorD>& inputs, const DoubleLoss& f, double delta = 1e-3) {
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  auto loss = f(tape, vars);
  tape.backward(loss);
  std::vector<TensorD> analytic;
  for (auto v : vars) analytic.push_back(tape.grad(v));

  auto eval = [&](const std::vector<TensorD>& xs) {
    ad::Tape<double> t;
    std::vector<ad::Var<double>> vs;
    for (const auto& x : xs) vs.push_back(t.leaf(x, false));
    return f(t, vs).value()[0];
  };
  double max_err = 0.0, max_ref = 1e-6;
  std::vector<TensorD> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t e = 0; e < probe[i].storage().size(); ++e) {
      const double keep = probe[i][e];
      probe[i][e] = keep + delta;
      const double up = eval(probe);
      probe[i][e] = keep - delta;
      const double down = eval(probe);
      probe[i][e] = keep;
      const double numeric = (up - down) / (2.0 * delta);
      max_err = std::max(max_err, std::abs(numeric - analytic[i][e]));
      max_ref = std::max(max_ref, std::abs(numeric));
    }
  }
  return max_err / max_ref;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.storage().size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

inline Tensor row_of(const Tensor& t, int r) {
  return Tensor({1, t.cols()}, std::vector<float>(t.row(r).begin(), t.row(r).end()));
}

}  // namespace firp::testing
