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

#include "firp/firp_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "firp/base_training.hpp"

namespace firp {

BoolMatrix training_attention_mask(int n, int step) {
  if (n < 1 || step < 1) throw ContractError("training_attention_mask: need n >= 1 and step >= 1");
  BoolMatrix m(2 * n, 2 * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) m.set(r, c, true);
  for (int j = 0; j < n; ++j) {
    const int last = std::min(j + step, n);  // real columns [0, last)
    for (int c = 0; c < last; ++c) m.set(n + j, c, true);
    m.set(n + j, n + j, true);
  }
  return m;
}

namespace {

void check_earlier(const Projection& proj, const std::vector<Projection>& earlier) {
  if (static_cast<int>(earlier.size()) != proj.step - 1) {
    throw DependencyError("step " + std::to_string(proj.step) + " needs the trained projections of steps 1.." +
                          std::to_string(proj.step - 1) + ", got " + std::to_string(earlier.size()));
  }
  for (std::size_t s = 0; s < earlier.size(); ++s) {
    if (earlier[s].step != static_cast<int>(s) + 1) throw DependencyError("earlier projections must be steps 1..i-1 in order");
    const int next_layer = s + 1 < earlier.size() ? earlier[s + 1].layer : proj.layer;
    if (earlier[s].layer >= next_layer) throw ParameterError("projection layers must increase with the step");
  }
}

}  // namespace

TrainingBatch build_training_sequence(const std::vector<int>& tokens, const Projection& proj,
                                      const std::vector<Projection>& earlier, PseudoVisibility visibility) {
  const int n = static_cast<int>(tokens.size());
  if (proj.step < 1) throw ContractError("projection step must be >= 1");
  if (n < proj.step + 1) {
    throw DataError("training sequence of " + std::to_string(n) + " tokens has no supervised row for step " +
                    std::to_string(proj.step));
  }
  TrainingBatch b;
  b.tokens = tokens;
  b.n = n;
  b.step = proj.step;
  b.layer = proj.layer;
  b.visibility = visibility;
  if (visibility == PseudoVisibility::kCurriculum) {
    check_earlier(proj, earlier);
    for (const auto& e : earlier) {
      b.group_steps.push_back(e.step);
      b.group_layers.push_back(e.layer);
    }
  }
  b.group_steps.push_back(proj.step);
  b.group_layers.push_back(proj.layer);

  const int groups = static_cast<int>(b.group_steps.size());
  const int rows = n * (1 + groups);
  b.spec.mask = BoolMatrix(rows, rows);
  b.spec.position_ids.resize(static_cast<std::size_t>(rows));
  for (int r = 0; r < n; ++r) {
    b.spec.position_ids[r] = r;
    for (int c = 0; c <= r; ++c) b.spec.mask.set(r, c, true);
  }
  for (int g = 0; g < groups; ++g) {
    const int s = b.group_steps[g];
    for (int j = 0; j < n; ++j) {
      const int row = b.pseudo_row(g, j);
      b.spec.position_ids[row] = j + s;
      for (int c = 0; c < std::min(j + s, n); ++c) b.spec.mask.set(row, c, true);
      for (int e = 0; e < g; ++e) b.spec.mask.set(row, b.pseudo_row(e, j), true);
      b.spec.mask.set(row, row, true);
    }
  }
  for (int j = 0; j + proj.step < n; ++j) b.alignment.emplace_back(b.pseudo_row(groups - 1, j), j + proj.step);
  return b;
}

double firp_kl_loss(const Tensor& logits, const std::vector<std::pair<int, int>>& alignment) {
  if (alignment.empty()) throw DataError("firp_kl_loss: empty alignment");
  double total = 0.0;
  for (auto [p, t] : alignment) {
    if (p < 0 || t < 0 || p >= logits.rows() || t >= logits.rows()) {
      throw DimensionError("firp_kl_loss: alignment row outside logits " + to_string(logits.shape()));
    }
    Tensor lp({logits.cols()}, std::vector<float>(logits.row(p).begin(), logits.row(p).end()));
    Tensor lt({logits.cols()}, std::vector<float>(logits.row(t).begin(), logits.row(t).end()));
    total += kl_divergence(softmax(lp).values(), softmax(lt).values(), kKlEpsilon);
  }
  return total;
}

std::vector<std::vector<int>> chunk_windows(const std::vector<int>& stream, int seq_len) {
  std::vector<std::vector<int>> out;
  if (seq_len < 1) return out;
  for (std::size_t s = 0; s + static_cast<std::size_t>(seq_len) <= stream.size(); s += seq_len) {
    out.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(s),
                     stream.begin() + static_cast<std::ptrdiff_t>(s) + seq_len);
  }
  return out;
}

namespace {

std::vector<ProjectionVars<float>> frozen_vars(ad::Tape<float>& tape, const std::vector<Projection>& earlier,
                                               PseudoVisibility visibility) {
  std::vector<ProjectionVars<float>> vars;
  if (visibility == PseudoVisibility::kCurriculum) {
    for (const auto& e : earlier) vars.push_back({tape.ref(e.weight, false), tape.ref(e.bias, false)});
  }
  return vars;
}

}  // namespace

ProjectionTrainResult train_projection(const Model& model, const std::vector<int>& corpus, Projection init,
                                       const std::vector<Projection>& earlier, const FirpTrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  if (init.layer < 1 || init.layer > mc.n_layers - 1) {
    throw ParameterError("projection layer " + std::to_string(init.layer) + " outside [1, " +
                         std::to_string(mc.n_layers - 1) + "]");
  }
  if (init.weight.shape() != Shape{mc.d_model, mc.d_model} || init.bias.shape() != Shape{mc.d_model}) {
    throw DimensionError("projection shapes " + to_string(init.weight.shape()) + " / " + to_string(init.bias.shape()));
  }
  if (cfg.visibility == PseudoVisibility::kCurriculum) check_earlier(init, earlier);
  if (cfg.seq_len < init.step + 1) throw ParameterError("seq_len leaves no supervised rows");
  if (cfg.seq_len + init.step > mc.max_seq_len) throw ParameterError("seq_len + step exceeds max_seq_len");
  check_tokens(mc, corpus);
  auto windows = chunk_windows(corpus, cfg.seq_len);
  if (windows.empty()) throw DataError("train_projection: corpus shorter than one window");

  ProjectionTrainResult result;
  result.projection = std::move(init);
  Projection& proj = result.projection;
  AdamState w_state, b_state;
  std::mt19937_64 rng(cfg.seed ^ (0x51ed270b2f3c4a1dULL * static_cast<std::uint64_t>(proj.step)));
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));

  int opt_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      ad::Tape<float> tape;
      TransformerGraph<float> g(tape, mc, model.weights(), false);
      auto params = frozen_vars(tape, earlier, cfg.visibility);
      auto w = tape.ref(proj.weight, true);
      auto bvar = tape.ref(proj.bias, true);
      params.push_back({w, bvar});
      std::vector<ad::Var<float>> losses;
      std::size_t rows = 0;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        auto tb = build_training_sequence(windows[order[k]], proj, earlier, cfg.visibility);
        rows += tb.alignment.size();
        losses.push_back(firp_batch_loss(g, tb, params));
      }
      auto total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
      total = ad::scale(total, 1.0f / static_cast<float>(rows));
      const double loss = total.value()[0];
      if (!std::isfinite(loss)) {
        throw TrainingError("projection step " + std::to_string(proj.step) + ": non-finite loss at update " +
                            std::to_string(opt_step));
      }
      tape.backward(total);
      std::vector<Tensor> grads{tape.grad(w), tape.grad(bvar)};
      clip_global_norm(grads, cfg.grad_clip);
      const std::string prefix = "firp.proj." + std::to_string(proj.step);
      adamw_step(proj.weight, grads[0], w_state, cfg.adam, prefix + ".W");
      adamw_step(proj.bias, grads[1], b_state, cfg.adam, prefix + ".b");
      result.losses.push_back(loss);
      if (cfg.on_step) cfg.on_step(opt_step, loss);
      ++opt_step;
    }
  }
  return result;
}

double evaluate_firp_loss(const Model& model, const std::vector<int>& stream, const Projection& proj,
                          const std::vector<Projection>& earlier, PseudoVisibility visibility, int seq_len,
                          int max_windows) {
  auto windows = chunk_windows(stream, seq_len);
  if (windows.empty()) throw DataError("evaluate_firp_loss: stream shorter than one window");
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t k = 0; k < windows.size() && static_cast<int>(k) < max_windows; ++k) {
    ad::Tape<float> tape;
    TransformerGraph<float> g(tape, model.config(), model.weights(), false);
    auto params = frozen_vars(tape, earlier, visibility);
    params.push_back({tape.ref(proj.weight, false), tape.ref(proj.bias, false)});
    auto tb = build_training_sequence(windows[k], proj, earlier, visibility);
    total += firp_batch_loss(g, tb, params).value()[0];
    rows += tb.alignment.size();
  }
  return total / static_cast<double>(rows);
}

}  // namespace firp
