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

// Toy decoder-only transformer: pre-norm blocks with RMS normalization,
// SiLU-gated feed-forward, rotary or learned positions, explicit attention
// masks and position ids, partial-depth forward and a slot-addressed KV cache.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "firp/tensor.hpp"
#include "firp/tensor_ops.hpp"

namespace firp {

enum class PositionEncoding { kLearned, kRotary };

struct ModelConfig {
  int vocab_size = 128;
  int d_model = 128;
  int n_layers = 8;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 512;
  PositionEncoding position_encoding = PositionEncoding::kRotary;
  bool tie_embeddings = false;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct BasicLayerWeights {
  BasicTensor<T> attn_norm;  // [d]
  BasicTensor<T> wq, wk, wv, wo;  // [d, d], applied as x·W
  BasicTensor<T> ffn_norm;  // [d]
  BasicTensor<T> w_gate, w_up;  // [d, d_ff]
  BasicTensor<T> w_down;  // [d_ff, d]
};

template <typename T>
struct BasicModelWeights {
  BasicTensor<T> token_embedding;     // [V, d]
  BasicTensor<T> position_embedding;  // [max_seq_len, d]; empty under rotary
  std::vector<BasicLayerWeights<T>> layers;
  BasicTensor<T> final_norm;  // [d]
  BasicTensor<T> lm_head;     // [d, V]; empty when tied to the embedding

  // Visits every present tensor in the fixed checkpoint order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  template <typename U>
  BasicModelWeights<U> cast() const {
    BasicModelWeights<U> out;
    out.token_embedding = token_embedding.template cast<U>();
    out.position_embedding = position_embedding.template cast<U>();
    for (const auto& l : layers) {
      out.layers.push_back({l.attn_norm.template cast<U>(), l.wq.template cast<U>(), l.wk.template cast<U>(),
                            l.wv.template cast<U>(), l.wo.template cast<U>(), l.ffn_norm.template cast<U>(),
                            l.w_gate.template cast<U>(), l.w_up.template cast<U>(), l.w_down.template cast<U>()});
    }
    out.final_norm = final_norm.template cast<U>();
    out.lm_head = lm_head.template cast<U>();
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string("tok_embedding"), self.token_embedding);
    if (!self.position_embedding.empty()) f(std::string("pos_embedding"), self.position_embedding);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      f(p + "attn_norm", l.attn_norm);
      f(p + "wq", l.wq);
      f(p + "wk", l.wk);
      f(p + "wv", l.wv);
      f(p + "wo", l.wo);
      f(p + "ffn_norm", l.ffn_norm);
      f(p + "w_gate", l.w_gate);
      f(p + "w_up", l.w_up);
      f(p + "w_down", l.w_down);
    }
    f(std::string("final_norm"), self.final_norm);
    if (!self.lm_head.empty()) f(std::string("lm_head"), self.lm_head);
  }
};

using ModelWeights = BasicModelWeights<float>;

// Random initialization: N(0, init_std) matrices, residual output
// projections scaled by 1/sqrt(2·n_layers), unit norm gains.
ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed, double init_std = 0.02);

// Expected tensor shapes, keyed by checkpoint name.
std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& cfg);

struct AttentionSpec {
  BoolMatrix mask;  // [q_len, kv_len], true = may attend
  std::vector<int> position_ids;

  // Causal mask for q_len new rows after `prefix` cached slots; positions
  // continue from first_position.
  static AttentionSpec causal(int q_len, int prefix = 0, int first_position = 0);
};

// Per-layer keys (post-rotary) and values, one row per slot.
class KvCache {
 public:
  KvCache() = default;
  explicit KvCache(const ModelConfig& cfg);

  int n_layers() const { return static_cast<int>(layers_.size()); }
  int capacity() const { return capacity_; }
  // Slot count shared by all layers; throws ContractError if they differ.
  int slot_count() const;
  int slot_count(int layer) const { return layers_.at(layer).keys.rows(); }

  const Tensor& keys(int layer) const { return layers_.at(layer).keys; }
  const Tensor& values(int layer) const { return layers_.at(layer).values; }
  const std::vector<int>& positions(int layer = 0) const { return layers_.at(layer).positions; }

  void append(int layer, const Tensor& keys, const Tensor& values, std::span<const int> positions);

  // Keeps the listed slots (strictly ascending) in order on every layer.
  void compact(const std::vector<int>& keep_slots);

 private:
  struct Layer {
    Tensor keys;
    Tensor values;
    std::vector<int> positions;
  };
  std::vector<Layer> layers_;
  int capacity_ = 0;
};

// Hidden states after `layer_index` blocks (0 = embeddings).
struct HiddenMatrix {
  Tensor values;
  int layer_index = 0;
};

// Greedy token: argmax, ties to the lowest id.
inline int greedy_next(std::span<const float> logit_row) { return argmax(logit_row); }

class Model {
 public:
  Model() = default;
  Model(ModelConfig cfg, ModelWeights weights);

  const ModelConfig& config() const { return cfg_; }
  const ModelWeights& weights() const { return weights_; }

  // Embeds tokens at positions (default 0..n-1; learned positions added here).
  HiddenMatrix embed(const std::vector<int>& tokens, const std::vector<int>& positions = {}) const;

  HiddenMatrix forward_layers(const HiddenMatrix& h, int from_layer, int to_layer, const AttentionSpec& spec,
                              KvCache* cache = nullptr, bool append_to_cache = false) const;

  // Final norm then lm-head.
  Tensor logits(const HiddenMatrix& h) const;

  // Full-stack forward of a token block after the cached prefix; returns
  // logits for every row and appends to the cache.
  Tensor forward_tokens(const std::vector<int>& tokens, KvCache& cache) const;

  std::vector<int> autoregressive_generate(const std::vector<int>& prompt, int max_new_tokens) const;

  // Reference generator that recomputes the whole sequence for every token.
  std::vector<int> generate_uncached(const std::vector<int>& prompt, int max_new_tokens) const;

 private:
  ModelConfig cfg_;
  ModelWeights weights_;
};

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens);

}  // namespace firp
