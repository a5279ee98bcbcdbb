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

#include "firp/model.hpp"

#include <cmath>
#include <random>

#include "firp/graph.hpp"

namespace firp {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ParameterError("vocab_size must be >= 2");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1) {
    throw ParameterError("model dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) throw ParameterError("d_model must be divisible by n_heads");
  if (position_encoding == PositionEncoding::kRotary && head_dim() % 2 != 0) {
    throw ParameterError("rotary encoding needs an even head dimension");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"d_ff", d_ff},
          {"max_seq_len", max_seq_len},
          {"position_encoding", position_encoding == PositionEncoding::kRotary ? "rotary" : "learned"},
          {"tie_embeddings", tie_embeddings}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  const auto pe = j.value("position_encoding", std::string("rotary"));
  if (pe == "rotary") {
    c.position_encoding = PositionEncoding::kRotary;
  } else if (pe == "learned") {
    c.position_encoding = PositionEncoding::kLearned;
  } else {
    throw ParameterError("unknown position_encoding '" + pe + "'");
  }
  c.tie_embeddings = j.value("tie_embeddings", false);
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  const int d = cfg.d_model;
  out.emplace_back("tok_embedding", Shape{cfg.vocab_size, d});
  if (cfg.position_encoding == PositionEncoding::kLearned) out.emplace_back("pos_embedding", Shape{cfg.max_seq_len, d});
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attn_norm", Shape{d});
    out.emplace_back(p + "wq", Shape{d, d});
    out.emplace_back(p + "wk", Shape{d, d});
    out.emplace_back(p + "wv", Shape{d, d});
    out.emplace_back(p + "wo", Shape{d, d});
    out.emplace_back(p + "ffn_norm", Shape{d});
    out.emplace_back(p + "w_gate", Shape{d, cfg.d_ff});
    out.emplace_back(p + "w_up", Shape{d, cfg.d_ff});
    out.emplace_back(p + "w_down", Shape{cfg.d_ff, d});
  }
  out.emplace_back("final_norm", Shape{d});
  if (!cfg.tie_embeddings) out.emplace_back("lm_head", Shape{d, cfg.vocab_size});
  return out;
}

ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed, double init_std) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double resid_std = init_std / std::sqrt(2.0 * cfg.n_layers);
  auto normal = [&](Shape shape, double std) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std));
    for (auto& v : t.values()) v = dist(rng);
    return t;
  };
  const int d = cfg.d_model;
  ModelWeights w;
  w.token_embedding = normal({cfg.vocab_size, d}, init_std);
  if (cfg.position_encoding == PositionEncoding::kLearned) w.position_embedding = normal({cfg.max_seq_len, d}, init_std);
  for (int i = 0; i < cfg.n_layers; ++i) {
    BasicLayerWeights<float> l;
    l.attn_norm = Tensor({d}, 1.0f);
    l.wq = normal({d, d}, init_std);
    l.wk = normal({d, d}, init_std);
    l.wv = normal({d, d}, init_std);
    l.wo = normal({d, d}, resid_std);
    l.ffn_norm = Tensor({d}, 1.0f);
    l.w_gate = normal({d, cfg.d_ff}, init_std);
    l.w_up = normal({d, cfg.d_ff}, init_std);
    l.w_down = normal({cfg.d_ff, d}, resid_std);
    w.layers.push_back(std::move(l));
  }
  w.final_norm = Tensor({d}, 1.0f);
  if (!cfg.tie_embeddings) w.lm_head = normal({d, cfg.vocab_size}, init_std);
  return w;
}

AttentionSpec AttentionSpec::causal(int q_len, int prefix, int first_position) {
  AttentionSpec s{BoolMatrix(q_len, prefix + q_len), {}};
  for (int r = 0; r < q_len; ++r) {
    for (int c = 0; c <= prefix + r; ++c) s.mask.set(r, c);
    s.position_ids.push_back(first_position + r);
  }
  return s;
}

KvCache::KvCache(const ModelConfig& cfg) : capacity_(cfg.max_seq_len) {
  for (int l = 0; l < cfg.n_layers; ++l) {
    layers_.push_back({Tensor({0, cfg.d_model}), Tensor({0, cfg.d_model}), {}});
  }
}

int KvCache::slot_count() const {
  if (layers_.empty()) return 0;
  const int n = layers_.front().keys.rows();
  for (const auto& l : layers_) {
    if (l.keys.rows() != n) throw ContractError("kv cache layers hold different slot counts");
  }
  return n;
}

void KvCache::append(int layer, const Tensor& keys, const Tensor& values, std::span<const int> positions) {
  auto& l = layers_.at(layer);
  if (keys.rows() != static_cast<int>(positions.size()) || values.rows() != keys.rows()) {
    throw ContractError("kv cache append: row counts differ");
  }
  if (l.keys.rows() + keys.rows() > capacity_) {
    throw CapacityError("kv cache overflow: " + std::to_string(l.keys.rows() + keys.rows()) + " slots > " +
                        std::to_string(capacity_));
  }
  l.keys.append_rows(keys);
  l.values.append_rows(values);
  l.positions.insert(l.positions.end(), positions.begin(), positions.end());
}

void KvCache::compact(const std::vector<int>& keep_slots) {
  const int n = slot_count();
  for (std::size_t i = 0; i < keep_slots.size(); ++i) {
    if (keep_slots[i] < 0 || keep_slots[i] >= n) {
      throw ContractError("compact_cache: slot " + std::to_string(keep_slots[i]) + " outside [0, " +
                          std::to_string(n) + ")");
    }
    if (i > 0 && keep_slots[i] <= keep_slots[i - 1]) throw ContractError("compact_cache: slots must be ascending");
  }
  for (auto& l : layers_) {
    l.keys.keep_rows(keep_slots);
    l.values.keep_rows(keep_slots);
    std::vector<int> pos;
    pos.reserve(keep_slots.size());
    for (int s : keep_slots) pos.push_back(l.positions[s]);
    l.positions = std::move(pos);
  }
}

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(cfg.vocab_size));
    }
  }
}

Model::Model(ModelConfig cfg, ModelWeights weights) : cfg_(cfg), weights_(std::move(weights)) {
  cfg_.validate();
  for (const auto& [name, shape] : expected_shapes(cfg_)) {
    bool found = false;
    weights_.for_each([&](const std::string& n, const Tensor& t) {
      if (n != name) return;
      found = true;
      if (t.shape() != shape) {
        throw DimensionError("weight " + name + " has shape " + to_string(t.shape()) + ", expected " + to_string(shape));
      }
    });
    if (!found) throw DimensionError("missing weight " + name);
  }
}

HiddenMatrix Model::embed(const std::vector<int>& tokens, const std::vector<int>& positions) const {
  check_tokens(cfg_, tokens);
  std::vector<int> pos = positions;
  if (pos.empty()) {
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i) pos.push_back(i);
  }
  if (pos.size() != tokens.size()) throw ContractError("embed: positions and tokens differ in length");
  for (int p : pos) {
    if (p < 0 || p >= cfg_.max_seq_len) throw CapacityError("embed: position outside max_seq_len");
  }
  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg_, weights_, false);
  return {g.embed(tokens, pos).value(), 0};
}

HiddenMatrix Model::forward_layers(const HiddenMatrix& h, int from_layer, int to_layer, const AttentionSpec& spec,
                                   KvCache* cache, bool append_to_cache) const {
  if (h.layer_index != from_layer) {
    throw ContractError("forward_layers: hidden states are at layer " + std::to_string(h.layer_index) +
                        ", not " + std::to_string(from_layer));
  }
  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg_, weights_, false);
  std::optional<CacheView<float>> view;
  if (cache) {
    view = view_of(*cache);
    // only the forwarded range has to agree; the others may be mid-update
    view->slots = cache->slot_count(from_layer);
    for (int l = from_layer; l < to_layer; ++l) {
      if (cache->slot_count(l) != view->slots) throw ContractError("forward_layers: cache layers disagree");
    }
  }
  auto run = run_layers<float>(g, tape.constant(h.values), from_layer, to_layer, spec, view ? &*view : nullptr, {});
  if (cache && append_to_cache) {
    for (int l = from_layer; l < to_layer; ++l) {
      cache->append(l, run.keys[l - from_layer], run.values[l - from_layer], spec.position_ids);
    }
  }
  return {run.hidden.value(), to_layer};
}

Tensor Model::logits(const HiddenMatrix& h) const {
  if (h.layer_index != cfg_.n_layers) {
    throw ContractError("logits: hidden states are at layer " + std::to_string(h.layer_index) + ", expected " +
                        std::to_string(cfg_.n_layers));
  }
  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg_, weights_, false);
  return g.logits(tape.constant(h.values)).value();
}

Tensor Model::forward_tokens(const std::vector<int>& tokens, KvCache& cache) const {
  const int prefix = cache.slot_count();
  if (prefix + static_cast<int>(tokens.size()) > cfg_.max_seq_len) {
    throw CapacityError("sequence of " + std::to_string(prefix + tokens.size()) + " tokens exceeds max_seq_len");
  }
  const auto spec = AttentionSpec::causal(static_cast<int>(tokens.size()), prefix, prefix);
  HiddenMatrix h = embed(tokens, spec.position_ids);
  h = forward_layers(h, 0, cfg_.n_layers, spec, &cache, true);
  return logits(h);
}

std::vector<int> Model::autoregressive_generate(const std::vector<int>& prompt, int max_new_tokens) const {
  if (prompt.empty()) throw DataError("autoregressive_generate: empty prompt");
  if (max_new_tokens < 0) throw ParameterError("max_new_tokens must be >= 0");
  if (static_cast<int>(prompt.size()) + max_new_tokens > cfg_.max_seq_len) {
    throw CapacityError("prompt of " + std::to_string(prompt.size()) + " + " + std::to_string(max_new_tokens) +
                        " new tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  check_tokens(cfg_, prompt);
  std::vector<int> out = prompt;
  if (max_new_tokens == 0) return out;
  KvCache cache(cfg_);
  Tensor lg = forward_tokens(prompt, cache);
  for (int i = 0; i < max_new_tokens; ++i) {
    const int next = greedy_next(lg.row(lg.rows() - 1));
    out.push_back(next);
    if (i + 1 < max_new_tokens) lg = forward_tokens({next}, cache);
  }
  return out;
}

std::vector<int> Model::generate_uncached(const std::vector<int>& prompt, int max_new_tokens) const {
  if (prompt.empty()) throw DataError("generate_uncached: empty prompt");
  if (static_cast<int>(prompt.size()) + max_new_tokens > cfg_.max_seq_len) {
    throw CapacityError("generate_uncached: exceeds max_seq_len");
  }
  std::vector<int> out = prompt;
  for (int i = 0; i < max_new_tokens; ++i) {
    KvCache scratch(cfg_);
    Tensor lg = forward_tokens(out, scratch);
    out.push_back(greedy_next(lg.row(lg.rows() - 1)));
  }
  return out;
}

}  // namespace firp
