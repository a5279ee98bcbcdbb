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

#include "firp/decode.hpp"

#include <algorithm>

#include "firp/errors.hpp"
#include "firp/graph.hpp"
#include "firp/tensor_ops.hpp"

namespace firp {

double DecodeMetrics::step_accuracy(int step) const {
  const std::size_t i = static_cast<std::size_t>(step - 1);
  if (i >= step_trials.size() || step_trials[i] == 0) return 0.0;
  return double(step_hits[i]) / step_trials[i];
}

void DecodeMetrics::record_forward(int accepted) {
  if (static_cast<int>(accept_histogram.size()) <= accepted) accept_histogram.resize(accepted + 1, 0);
  ++accept_histogram[accepted];
  ++forward_count;
  emitted += accepted + 1;
}

void DecodeMetrics::merge(const DecodeMetrics& o) {
  forward_count += o.forward_count;
  emitted += o.emitted;
  auto add = [](std::vector<long>& a, const std::vector<long>& b) {
    if (a.size() < b.size()) a.resize(b.size(), 0);
    for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  };
  add(accept_histogram, o.accept_histogram);
  add(step_hits, o.step_hits);
  add(step_trials, o.step_trials);
}

nlohmann::json DecodeMetrics::to_json() const {
  std::vector<double> acc;
  for (std::size_t i = 0; i < step_trials.size(); ++i) acc.push_back(step_accuracy(static_cast<int>(i) + 1));
  return {{"forward_count", forward_count},     {"emitted", emitted},
          {"mean_acceptance", mean_acceptance()}, {"accept_histogram", accept_histogram},
          {"step_hits", step_hits},             {"step_trials", step_trials},
          {"step_accuracy", acc}};
}

std::vector<int> StepDistributions::top1() const {
  std::vector<int> out;
  for (int i = 0; i < probs.rows(); ++i) out.push_back(argmax(probs.row(i)));
  return out;
}

namespace {

Tensor take_rows(const Tensor& t, const std::vector<int>& rows) {
  Tensor out({static_cast<int>(rows.size()), t.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.row(rows[r]).data(), t.cols(), out.row(static_cast<int>(r)).data());
  }
  return out;
}

struct ForwardPlan {
  std::vector<int> tokens;
  std::vector<int> positions;
  BoolMatrix mask;  // [R, slots + R]
  bool fused = false;
  bool retain = false;
  std::vector<int> draft_sources;  // real rows that get pseudo rows when fused
};

struct ForwardOut {
  Tensor logits;                             // every row, real rows first
  std::vector<Tensor> keys, values;          // per layer, real rows only
  std::vector<std::vector<int>> pseudo_row;  // [step][real row] -> row, -1 if absent
  std::vector<Tensor> retained;              // per step, layer-t_i states of the real rows
};

ForwardOut run_forward(const Model& model, const ProjectionSet& proj, const KvCache& cache, const ForwardPlan& plan) {
  const ModelConfig& cfg = model.config();
  const int slots = cache.slot_count();
  const int R = static_cast<int>(plan.tokens.size());
  const int K = proj.K();
  ForwardOut out;
  out.pseudo_row.assign(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(R), -1));

  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg, model.weights(), false);
  std::vector<Injection<float>> injections;
  std::vector<std::pair<int, int>> pseudo;  // (step index, source row) in row order
  std::vector<int> positions = plan.positions;
  if (plan.fused) {
    int next = R;
    for (int i = 0; i < K; ++i) {
      const auto& p = proj.projections[i];
      Injection<float> inj{p.layer, tape.ref(p.weight, false), tape.ref(p.bias, false), {}, std::nullopt};
      for (int v : plan.draft_sources) {
        if (plan.positions[v] + i + 1 >= cfg.max_seq_len) continue;
        inj.source_rows.push_back(v);
        out.pseudo_row[i][v] = next++;
        pseudo.emplace_back(i, v);
        positions.push_back(plan.positions[v] + i + 1);
      }
      if (!inj.source_rows.empty()) injections.push_back(std::move(inj));
    }
  }
  const int total = static_cast<int>(positions.size());
  AttentionSpec spec;
  spec.position_ids = positions;
  spec.mask = BoolMatrix(total, slots + total);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < slots + R; ++c) spec.mask.set(r, c, plan.mask(r, c));
  for (std::size_t k = 0; k < pseudo.size(); ++k) {
    const auto [i, v] = pseudo[k];
    const int row = R + static_cast<int>(k);
    for (int c = 0; c < slots + R; ++c) spec.mask.set(row, c, plan.mask(v, c));
    if (!proj.masked) {
      for (int e = 0; e < i; ++e) spec.mask.set(row, slots + out.pseudo_row[e][v], true);
    }
    spec.mask.set(row, slots + row, true);
  }

  auto view = view_of(cache);
  auto x = g.embed(plan.tokens, plan.positions);
  auto run = run_layers<float>(g, x, 0, cfg.n_layers, spec, &view, std::move(injections), plan.retain);
  out.logits = g.logits(run.hidden).value();
  std::vector<int> real(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) real[r] = r;
  for (int l = 0; l < cfg.n_layers; ++l) {
    out.keys.push_back(take_rows(run.keys[l], real));
    out.values.push_back(take_rows(run.values[l], real));
  }
  if (plan.retain) {
    for (const auto& p : proj.projections) out.retained.push_back(take_rows(run.per_layer[p.layer].value(), real));
  }
  return out;
}

SourceStates source_of(const ForwardOut& out, int row, int position) {
  SourceStates s;
  s.position = position;
  for (const auto& t : out.retained) s.per_step.push_back(take_rows(t, {row}));
  return s;
}

StepDistributions fused_distributions(const ForwardOut& out, int row, int position) {
  StepDistributions d;
  d.source_position = position;
  std::vector<int> rows;
  for (const auto& per_step : out.pseudo_row) {
    if (per_step[row] < 0) break;
    rows.push_back(per_step[row]);
  }
  d.probs = rows.empty() ? Tensor({0, out.logits.cols()}) : softmax(take_rows(out.logits, rows));
  return d;
}

void append_rows(KvCache& cache, const ForwardOut& out, const std::vector<int>& rows,
                 const std::vector<int>& positions) {
  std::vector<int> pos;
  for (int r : rows) pos.push_back(positions[r]);
  for (int l = 0; l < cache.n_layers(); ++l) {
    cache.append(l, take_rows(out.keys[l], rows), take_rows(out.values[l], rows), pos);
  }
}

}  // namespace

StepDistributions compute_step_distributions(const Model& model, const ProjectionSet& proj, const KvCache& cache,
                                             const SourceStates& source) {
  const ModelConfig& cfg = model.config();
  const int K = proj.K();
  const int d = cfg.d_model;
  if (static_cast<int>(source.per_step.size()) != K) {
    throw ContractError("compute_step_distributions: need retained states for " + std::to_string(K) +
                        " projection layers, have " + std::to_string(source.per_step.size()));
  }
  for (const auto& h : source.per_step) {
    if (h.rank() != 2 || h.rows() != 1 || h.cols() != d) {
      throw ContractError("compute_step_distributions: retained state has shape " + to_string(h.shape()));
    }
  }
  StepDistributions out;
  out.source_position = source.position;
  int steps = 0;
  while (steps < K && source.position + steps + 1 < cfg.max_seq_len) ++steps;
  if (steps == 0) {
    out.probs = Tensor({0, cfg.vocab_size});
    return out;
  }
  const int slots = cache.slot_count();
  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg, model.weights(), false);
  AttentionSpec spec;
  spec.mask = BoolMatrix(steps, slots + steps);
  for (int i = 0; i < steps; ++i) {
    spec.position_ids.push_back(source.position + i + 1);
    for (int c = 0; c < slots; ++c) spec.mask.set(i, c, true);
    if (!proj.masked) {
      for (int e = 0; e < i; ++e) spec.mask.set(i, slots + e, true);
    }
    spec.mask.set(i, slots + i, true);
  }
  const auto& first = proj.projections[0];
  auto x = project_rows(tape.ref(source.per_step[0], false), tape.ref(first.weight, false), tape.ref(first.bias, false));
  std::vector<Injection<float>> injections;
  for (int i = 1; i < steps; ++i) {
    const auto& p = proj.projections[i];
    injections.push_back(
        {p.layer, tape.ref(p.weight, false), tape.ref(p.bias, false), {}, tape.ref(source.per_step[i], false)});
  }
  auto view = view_of(cache);
  auto run = run_layers<float>(g, x, first.layer, cfg.n_layers, spec, &view, std::move(injections));
  out.probs = softmax(g.logits(run.hidden).value());
  return out;
}

DecodeSession::DecodeSession(const Model& model, const ProjectionSet& proj, DraftMode mode)
    : model_(&model), proj_(&proj), mode_(mode), cache_(model.config()) {
  proj.validate(model.config());
}

StepDistributions DecodeSession::draft_from(const SourceStates& src) const {
  if (proj_->K() == 0) {
    StepDistributions d;
    d.probs = Tensor({0, model_->config().vocab_size});
    d.source_position = src.position;
    return d;
  }
  return compute_step_distributions(*model_, *proj_, cache_, src);
}

int DecodeSession::prefill(const std::vector<int>& prompt) {
  if (prompt.empty()) throw DataError("prefill: empty prompt");
  if (!tokens_.empty()) throw ContractError("prefill: session already started");
  check_tokens(model_->config(), prompt);
  const int n = static_cast<int>(prompt.size());
  const auto causal = AttentionSpec::causal(n);
  ForwardPlan plan{prompt, causal.position_ids, causal.mask, mode_ == DraftMode::kFused,
                   mode_ == DraftMode::kTwoPass && proj_->K() > 0, {n - 1}};
  auto out = run_forward(*model_, *proj_, cache_, plan);
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) all[r] = r;
  append_rows(cache_, out, all, plan.positions);
  tokens_ = prompt;
  const int first = greedy_next(out.logits.row(n - 1));
  tokens_.push_back(first);
  dists_ = plan.fused ? fused_distributions(out, n - 1, n - 1) : draft_from(source_of(out, n - 1, n - 1));
  metrics_.record_forward(0);
  return first;
}

RoundResult DecodeSession::round(const TreeTemplate& tmpl, int budget) {
  if (tokens_.empty()) throw ContractError("round: call prefill first");
  if (budget < 1) throw ParameterError("round: budget must be >= 1");
  const int slots = cache_.slot_count();
  const int limit = std::min(dists_.available(), budget - 1);
  const DraftTree tree = instantiate_tree(tmpl.truncated(limit), take_rows(dists_.probs, [&] {
                                            std::vector<int> r(static_cast<std::size_t>(limit));
                                            for (int i = 0; i < limit; ++i) r[i] = i;
                                            return r;
                                          }()));
  drafts_.push_back({slots, dists_.top1()});
  const TreeBatch batch = build_tree_batch(tree, pending(), slots);

  ForwardPlan plan{batch.tokens, batch.position_ids, batch.mask, mode_ == DraftMode::kFused,
                   mode_ == DraftMode::kTwoPass && proj_->K() > 0, {}};
  if (plan.fused) {
    for (int r = 0; r < batch.rows(); ++r) plan.draft_sources.push_back(r);
  }
  auto out = run_forward(*model_, *proj_, cache_, plan);

  RoundResult res;
  int cur = 0;
  for (;;) {
    const int greedy = greedy_next(out.logits.row(cur));
    int next = -1;
    for (int r = cur + 1; r < batch.rows(); ++r) {
      if (batch.parent_row[r] == cur && batch.tokens[r] == greedy) {
        next = r;
        break;
      }
    }
    if (next < 0) {
      res.bonus = greedy;
      break;
    }
    res.accepted_rows.push_back(next);
    cur = next;
  }
  std::vector<int> keep{0};
  keep.insert(keep.end(), res.accepted_rows.begin(), res.accepted_rows.end());
  append_rows(cache_, out, keep, batch.position_ids);

  for (int r : res.accepted_rows) res.emitted.push_back(batch.tokens[r]);
  res.emitted.push_back(res.bonus);
  const bool truncated = static_cast<int>(res.emitted.size()) > budget;
  if (truncated) res.emitted.resize(static_cast<std::size_t>(budget));
  tokens_.insert(tokens_.end(), res.emitted.begin(), res.emitted.end());
  metrics_.record_forward(static_cast<int>(res.emitted.size()) - 1);

  if (truncated || static_cast<int>(res.emitted.size()) == budget) {
    dists_ = StepDistributions{Tensor({0, model_->config().vocab_size}), batch.position_ids[cur]};
  } else if (plan.fused) {
    dists_ = fused_distributions(out, cur, batch.position_ids[cur]);
  } else {
    dists_ = draft_from(source_of(out, cur, batch.position_ids[cur]));
  }
  return res;
}

void DecodeSession::score_drafts(const std::vector<int>& truth) {
  for (const auto& rec : drafts_) {
    for (std::size_t i = 0; i < rec.top1.size(); ++i) {
      const std::size_t pos = static_cast<std::size_t>(rec.pending_position) + i + 1;
      if (pos >= truth.size()) break;
      if (metrics_.step_trials.size() <= i) {
        metrics_.step_trials.resize(i + 1, 0);
        metrics_.step_hits.resize(i + 1, 0);
      }
      ++metrics_.step_trials[i];
      if (rec.top1[i] == truth[pos]) ++metrics_.step_hits[i];
    }
  }
  drafts_.clear();
}

SpeculativeDecoder::SpeculativeDecoder(const Model& model, ProjectionSet proj, DraftMode mode)
    : model_(&model), proj_(std::move(proj)), mode_(mode) {
  proj_.validate(model.config());
}

DecodeResult SpeculativeDecoder::decode(const std::vector<int>& prompt, int max_new_tokens,
                                        const TreeTemplate& tmpl) const {
  const ModelConfig& cfg = model_->config();
  tmpl.validate();
  if (max_new_tokens < 0) throw ParameterError("max_new_tokens must be >= 0");
  if (prompt.empty()) throw DataError("decode: empty prompt");
  if (static_cast<int>(prompt.size()) + max_new_tokens > cfg.max_seq_len) {
    throw CapacityError("prompt of " + std::to_string(prompt.size()) + " + " + std::to_string(max_new_tokens) +
                        " new tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  check_tokens(cfg, prompt);
  if (max_new_tokens == 0) return {prompt, {}};
  DecodeSession session(*model_, proj_, mode_);
  session.prefill(prompt);
  int produced = 1;
  while (produced < max_new_tokens) {
    produced += static_cast<int>(session.round(tmpl, max_new_tokens - produced).emitted.size());
  }
  session.score_drafts(session.tokens());
  return {session.tokens(), session.metrics()};
}

}  // namespace firp
