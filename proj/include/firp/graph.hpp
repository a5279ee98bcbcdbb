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

// Transformer forward pass expressed on an autodiff tape. Templated on the
// scalar type so gradient checks can run the identical graph in double.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "firp/autodiff.hpp"
#include "firp/model.hpp"

namespace firp {

inline constexpr double kNormEps = 1e-5;

template <typename T>
struct CacheView {
  std::vector<const BasicTensor<T>*> keys;    // indexed by layer
  std::vector<const BasicTensor<T>*> values;  // indexed by layer
  int slots = 0;
};

inline CacheView<float> view_of(const KvCache& cache) {
  CacheView<float> v;
  for (int l = 0; l < cache.n_layers(); ++l) {
    v.keys.push_back(&cache.keys(l));
    v.values.push_back(&cache.values(l));
  }
  v.slots = cache.n_layers() > 0 ? cache.slot_count(0) : 0;
  return v;
}

template <typename T>
class TransformerGraph {
 public:
  using VarT = ad::Var<T>;

  struct LayerVars {
    VarT attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
  };

  TransformerGraph(ad::Tape<T>& tape, const ModelConfig& cfg, const BasicModelWeights<T>& w, bool trainable)
      : tape_(tape), cfg_(cfg) {
    auto bind = [&](const std::string& name, const BasicTensor<T>& t) {
      VarT v = tape.ref(t, trainable);
      params_.emplace_back(name, v);
      return v;
    };
    tok_ = bind("tok_embedding", w.token_embedding);
    if (!w.position_embedding.empty()) pos_ = bind("pos_embedding", w.position_embedding);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
      const auto& l = w.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      layers_.push_back({bind(p + "attn_norm", l.attn_norm), bind(p + "wq", l.wq), bind(p + "wk", l.wk),
                         bind(p + "wv", l.wv), bind(p + "wo", l.wo), bind(p + "ffn_norm", l.ffn_norm),
                         bind(p + "w_gate", l.w_gate), bind(p + "w_up", l.w_up), bind(p + "w_down", l.w_down)});
    }
    final_norm_ = bind("final_norm", w.final_norm);
    if (!w.lm_head.empty()) {
      head_ = bind("lm_head", w.lm_head);
    } else {
      head_ = ad::transpose(tok_);
    }
  }

  ad::Tape<T>& tape() { return tape_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, VarT>>& params() const { return params_; }

  VarT embed(const std::vector<int>& ids, const std::vector<int>& positions) {
    VarT x = ad::embedding(tok_, ids);
    if (cfg_.position_encoding == PositionEncoding::kLearned) {
      x = ad::add(x, ad::embedding(*pos_, positions));
    }
    return x;
  }

  // One pre-norm block. cache_k/cache_v are the layer's cached rows (may be
  // null); out_k/out_v receive this call's new key/value rows.
  VarT block(int layer, VarT x, const BoolMatrix& mask, const std::vector<int>& positions,
             const BasicTensor<T>* cache_k, const BasicTensor<T>* cache_v, BasicTensor<T>* out_k,
             BasicTensor<T>* out_v) {
    const LayerVars& l = layers_.at(static_cast<std::size_t>(layer));
    const T eps = static_cast<T>(kNormEps);
    VarT h = ad::rmsnorm(x, l.attn_norm, eps);
    VarT q = ad::matmul(h, l.wq);
    VarT k = ad::matmul(h, l.wk);
    VarT v = ad::matmul(h, l.wv);
    if (cfg_.position_encoding == PositionEncoding::kRotary) {
      q = ad::rotary(q, positions, cfg_.n_heads);
      k = ad::rotary(k, positions, cfg_.n_heads);
    }
    if (out_k) *out_k = k.value();
    if (out_v) *out_v = v.value();
    VarT keys = k, values = v;
    if (cache_k && cache_k->rows() > 0) {
      keys = ad::concat_rows<T>({tape_.ref(*cache_k, false), k});
      values = ad::concat_rows<T>({tape_.ref(*cache_v, false), v});
    }
    VarT a = ad::attention(q, keys, values, mask, cfg_.n_heads);
    x = ad::add(x, ad::matmul(a, l.wo));
    VarT h2 = ad::rmsnorm(x, l.ffn_norm, eps);
    VarT gate = ad::silu(ad::matmul(h2, l.w_gate));
    VarT up = ad::matmul(h2, l.w_up);
    return ad::add(x, ad::matmul(ad::mul(gate, up), l.w_down));
  }

  VarT final_normed(VarT x) { return ad::rmsnorm(x, final_norm_, static_cast<T>(kNormEps)); }
  VarT logits(VarT x) { return ad::matmul(final_normed(x), head_); }
  VarT head() { return head_; }
  VarT final_norm_gain() { return final_norm_; }

 private:
  ad::Tape<T>& tape_;
  ModelConfig cfg_;
  VarT tok_;
  std::optional<VarT> pos_;
  std::vector<LayerVars> layers_;
  VarT final_norm_;
  VarT head_;
  std::vector<std::pair<std::string, VarT>> params_;
};

// Rows inserted mid-stack: at hidden index `layer`, the rows W·h_src + b are
// appended after the currently active rows.
template <typename T>
struct Injection {
  int layer = 0;
  ad::Var<T> weight;  // [d, d]
  ad::Var<T> bias;    // [d]
  std::vector<int> source_rows;
  std::optional<ad::Var<T>> external_source;  // used instead of source_rows when set
};

template <typename T>
ad::Var<T> project_rows(ad::Var<T> src, ad::Var<T> weight, ad::Var<T> bias) {
  return ad::add_bias(ad::matmul(src, ad::transpose(weight)), bias);
}

template <typename T>
struct LayerRun {
  ad::Var<T> hidden;
  // Per layer in [from, to): K/V rows computed for the active rows.
  std::vector<BasicTensor<T>> keys;
  std::vector<BasicTensor<T>> values;
  // Hidden after each layer index from..to (post-injection), when requested.
  std::vector<ad::Var<T>> per_layer;
};

// Forwards x (hidden at `from`) through blocks [from, to), inserting injected
// rows as their layer is reached. spec covers the cache columns followed by
// every row that will exist by the end, in insertion order.
template <typename T>
LayerRun<T> run_layers(TransformerGraph<T>& g, ad::Var<T> x, int from, int to, const AttentionSpec& spec,
                       const CacheView<T>* cache, std::vector<Injection<T>> injections, bool keep_layers = false) {
  const ModelConfig& cfg = g.config();
  if (from < 0 || to > cfg.n_layers || from >= to) {
    throw ContractError("forward_layers: invalid layer range [" + std::to_string(from) + ", " + std::to_string(to) +
                        ") for " + std::to_string(cfg.n_layers) + " layers");
  }
  std::stable_sort(injections.begin(), injections.end(),
                   [](const Injection<T>& a, const Injection<T>& b) { return a.layer < b.layer; });
  int total = x.rows();
  for (const auto& inj : injections) {
    if (inj.layer < from || inj.layer >= to) throw ContractError("injection layer outside the forwarded range");
    total += inj.external_source ? inj.external_source->rows() : static_cast<int>(inj.source_rows.size());
  }
  const int slots = cache ? cache->slots : 0;
  if (spec.mask.rows() != total || spec.mask.cols() != slots + total ||
      static_cast<int>(spec.position_ids.size()) != total) {
    throw ContractError("forward_layers: mask " + std::to_string(spec.mask.rows()) + "x" +
                        std::to_string(spec.mask.cols()) + " and " + std::to_string(spec.position_ids.size()) +
                        " position ids do not fit " + std::to_string(slots) + " cached + " + std::to_string(total) +
                        " rows");
  }
  for (int p : spec.position_ids) {
    if (p < 0 || p >= cfg.max_seq_len) throw CapacityError("position id " + std::to_string(p) + " outside max_seq_len");
  }

  LayerRun<T> run;
  std::size_t next = 0;
  BoolMatrix mask;
  std::vector<int> positions;
  int mask_rows = -1;
  for (int layer = from; layer < to; ++layer) {
    while (next < injections.size() && injections[next].layer == layer) {
      auto& inj = injections[next++];
      ad::Var<T> src = inj.external_source ? *inj.external_source : ad::gather_rows(x, inj.source_rows);
      x = ad::concat_rows<T>({x, project_rows(src, inj.weight, inj.bias)});
    }
    if (keep_layers) run.per_layer.push_back(x);
    const int active = x.rows();
    if (active != mask_rows) {
      for (int r = 0; r < active; ++r) {
        for (int c = slots + active; c < slots + total; ++c) {
          if (spec.mask(r, c)) {
            throw ContractError("attention mask lets row " + std::to_string(r) + " see row " +
                                std::to_string(c - slots) + " before it is injected");
          }
        }
      }
      mask = spec.mask.block(active, {{0, slots + active}});
      positions.assign(spec.position_ids.begin(), spec.position_ids.begin() + active);
      mask_rows = active;
    }
    BasicTensor<T> k, v;
    x = g.block(layer, x, mask, positions, cache ? cache->keys.at(layer) : nullptr,
                cache ? cache->values.at(layer) : nullptr, &k, &v);
    run.keys.push_back(std::move(k));
    run.values.push_back(std::move(v));
  }
  if (keep_layers) run.per_layer.push_back(x);
  run.hidden = x;
  return run;
}

}  // namespace firp
