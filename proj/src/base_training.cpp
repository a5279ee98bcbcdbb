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

#include "firp/base_training.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace firp {

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (float v : g.values()) sq += double(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.values()) v *= s;
  }
  return norm;
}

namespace {

double scheduled_lr(const BaseTrainConfig& hp, int step) {
  if (step < hp.warmup_steps) return hp.adam.lr * (step + 1) / hp.warmup_steps;
  const double span = std::max(1, hp.steps - hp.warmup_steps);
  const double progress = std::min(1.0, (step - hp.warmup_steps) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return hp.adam.lr * (hp.min_lr_ratio + (1.0 - hp.min_lr_ratio) * cosine);
}

}  // namespace

BaseTrainResult train_base_model(const std::vector<int>& corpus, const ModelConfig& cfg, const BaseTrainConfig& hp) {
  if (corpus.empty()) throw DataError("train_base_model: empty corpus");
  if (static_cast<int>(corpus.size()) < hp.seq_len + 1) {
    throw DataError("train_base_model: corpus shorter than one training window");
  }
  if (hp.seq_len + 1 > cfg.max_seq_len + 1 || hp.seq_len < 1) throw ParameterError("seq_len outside max_seq_len");
  check_tokens(cfg, corpus);

  BaseTrainResult result;
  result.weights = init_weights(cfg, hp.seed, hp.init_std);
  std::vector<Tensor*> tensors;
  std::vector<std::string> names;
  result.weights.for_each([&](const std::string& name, Tensor& t) {
    tensors.push_back(&t);
    names.push_back(name);
  });
  std::vector<AdamState> states(tensors.size());

  std::mt19937_64 rng(hp.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> start_dist(0, corpus.size() - static_cast<std::size_t>(hp.seq_len) - 1);

  for (int step = 0; step < hp.steps; ++step) {
    ad::Tape<float> tape;
    TransformerGraph<float> g(tape, cfg, result.weights, true);
    std::vector<ad::Var<float>> losses;
    for (int b = 0; b < hp.batch_size; ++b) {
      const std::size_t s = start_dist(rng);
      std::vector<int> window(corpus.begin() + static_cast<std::ptrdiff_t>(s),
                              corpus.begin() + static_cast<std::ptrdiff_t>(s) + hp.seq_len + 1);
      losses.push_back(window_lm_loss(g, window));
    }
    auto total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, 1.0f / static_cast<float>(hp.batch_size));
    const double loss = total.value()[0];
    if (!std::isfinite(loss)) throw TrainingError("train_base_model: non-finite loss at step " + std::to_string(step));
    if (step == 0) result.initial_loss = loss;
    result.losses.push_back(loss);
    tape.backward(total);

    std::vector<Tensor> grads;
    for (const auto& [name, var] : g.params()) grads.push_back(tape.grad(var));
    clip_global_norm(grads, hp.grad_clip);
    AdamWConfig adam = hp.adam;
    adam.lr = scheduled_lr(hp, step);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (g.params()[i].first != names[i]) throw ContractError("parameter order mismatch at " + names[i]);
      adamw_step(*tensors[i], grads[i], states[i], adam, names[i]);
    }
    if (hp.on_step) hp.on_step(step, loss);
  }
  result.final_loss = result.losses.empty() ? 0.0 : result.losses.back();
  return result;
}

double evaluate_lm_loss(const Model& model, const std::vector<int>& stream, int seq_len, int max_windows) {
  if (static_cast<int>(stream.size()) < seq_len + 1) throw DataError("evaluate_lm_loss: stream too short");
  double total = 0.0;
  int count = 0;
  for (std::size_t s = 0; s + seq_len + 1 <= stream.size() && count < max_windows; s += seq_len) {
    ad::Tape<float> tape;
    TransformerGraph<float> g(tape, model.config(), model.weights(), false);
    std::vector<int> window(stream.begin() + static_cast<std::ptrdiff_t>(s),
                            stream.begin() + static_cast<std::ptrdiff_t>(s) + seq_len + 1);
    total += window_lm_loss(g, window).value()[0];
    ++count;
  }
  return total / count;
}

}  // namespace firp
