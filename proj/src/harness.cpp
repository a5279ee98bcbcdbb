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

#include "firp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "firp/base_training.hpp"
#include "firp/errors.hpp"
#include "firp/graph.hpp"

namespace firp {
namespace {

// Hidden states at every layer index 0..n_layers plus the logits.
struct Trace {
  std::vector<Tensor> hidden;
  Tensor logits;
};

Trace trace_tokens(const Model& model, const std::vector<int>& tokens) {
  const auto& cfg = model.config();
  check_tokens(cfg, tokens);
  const int n = static_cast<int>(tokens.size());
  if (n > cfg.max_seq_len) throw CapacityError("trace: sequence exceeds max_seq_len");
  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg, model.weights(), false);
  const auto spec = AttentionSpec::causal(n);
  auto run = run_layers<float>(g, g.embed(tokens, spec.position_ids), 0, cfg.n_layers, spec, nullptr, {}, true);
  Trace t;
  for (const auto& v : run.per_layer) t.hidden.push_back(v.value());
  t.logits = g.logits(run.hidden).value();
  return t;
}

Tensor rows_of(const Tensor& t, int from, int count) {
  Tensor out({count, t.cols()});
  for (int r = 0; r < count; ++r) std::copy(t.row(from + r).begin(), t.row(from + r).end(), out.row(r).begin());
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> cumulative_topk(const AccuracyTable& t, int step) {
  std::vector<double> out;
  double acc = 0;
  for (int r = 1; r <= t.max_rank(); ++r) out.push_back(acc += t.at(step, r));
  return out;
}

std::vector<double> ranks(int n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  std::iota(x.begin(), x.end(), 1.0);
  return x;
}

nlohmann::json train_json(const FirpTrainConfig& c) {
  return {{"seq_len", c.seq_len},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"grad_clip", c.grad_clip},
          {"init_noise", c.init_noise},
          {"lr", c.adam.lr},
          {"seed", c.seed},
          {"masked", c.visibility == PseudoVisibility::kMasked}};
}

nlohmann::json study_json(const StudyConfig& c) {
  return {{"train", train_json(c.train)}, {"protocol", c.protocol.to_json()}, {"eval_windows", c.eval_windows}};
}

std::string protocol_note(const ProbeProtocol& p) {
  return "probe protocol: " + std::to_string(p.probe.points_per_sequence) + " split points per sequence, " +
         std::to_string(p.seeds.size()) + " seeds averaged (reference protocol uses 50 points per sequence)";
}

}  // namespace

// --- reports --------------------------------------------------------------

void ExperimentReport::validate() const {
  if (series.empty()) throw DataError("report '" + name + "' has no series");
  for (const auto& s : series) {
    if (s.y.empty()) throw DataError("report '" + name + "': series '" + s.name + "' is empty");
    if (s.x.size() != s.y.size()) throw DataError("report '" + name + "': series '" + s.name + "' x/y lengths differ");
  }
}

const Series& ExperimentReport::get(const std::string& series_name) const {
  for (const auto& s : series) {
    if (s.name == series_name) return s;
  }
  throw DataError("report '" + name + "' has no series '" + series_name + "'");
}

nlohmann::json ExperimentReport::payload() const {
  nlohmann::json s = nlohmann::json::object();
  for (const auto& v : series) s[v.name] = {{"x", v.x}, {"y", v.y}};
  nlohmann::json j = {{"name", name}, {"config", config}, {"series", s}, {"seed", seed}, {"notes", notes}};
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

nlohmann::json ExperimentReport::to_json() const {
  auto j = payload();
  if (!timing.empty()) j["timing"] = timing;
  return j;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "series,x,y\n";
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) out << s.name << ',' << s.x[i] << ',' << s.y[i] << '\n';
  }
  return out.str();
}

nlohmann::json ProbeProtocol::to_json() const {
  return {{"sequences", probe.sequences},
          {"seq_len", probe.seq_len},
          {"points_per_sequence", probe.points_per_sequence},
          {"min_prefix", probe.min_prefix},
          {"seeds", seeds},
          {"max_rank", max_rank}};
}

ProbeSets protocol_points(const Model& model, const std::vector<int>& stream, int K, const ProbeProtocol& protocol) {
  if (protocol.seeds.empty()) throw ParameterError("probe protocol needs at least one seed");
  ProbeSets sets;
  for (auto seed : protocol.seeds) {
    ProbeConfig pc = protocol.probe;
    pc.seed = seed;
    sets.push_back(sample_probe_points(model, stream, K, pc));
  }
  return sets;
}

AccuracyTable averaged_table(const ProbeSets& sets, const Drafter& drafter, int K, int max_rank) {
  if (sets.empty()) throw DataError("averaged_table: no probe sets");
  AccuracyTable avg;
  avg.a.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(max_rank), 0.0));
  for (const auto& pts : sets) {
    const auto t = tabulate_ranks(pts, drafter, K, max_rank);
    for (int i = 0; i < K; ++i)
      for (int r = 0; r < max_rank; ++r) avg.a[i][r] += t.a[i][r] / static_cast<double>(sets.size());
    avg.sample_count += t.sample_count;
  }
  return avg;
}

std::vector<std::vector<int>> sample_prompts(const std::vector<int>& stream, int count, int length,
                                             std::uint64_t seed) {
  if (count < 1 || length < 1) throw ParameterError("sample_prompts: count and length must be >= 1");
  if (static_cast<int>(stream.size()) < length) throw DataError("sample_prompts: stream shorter than one prompt");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> start(0, stream.size() - static_cast<std::size_t>(length));
  std::vector<std::vector<int>> out;
  for (int i = 0; i < count; ++i) {
    const auto at = static_cast<std::ptrdiff_t>(start(rng));
    out.emplace_back(stream.begin() + at, stream.begin() + at + length);
  }
  return out;
}

// --- acceptance -------------------------------------------------------------

AcceptEval eval_accept(const Model& model, const ProjectionSet& proj, const TreeTemplate& tmpl,
                       const std::vector<std::vector<int>>& prompts, const AcceptConfig& cfg) {
  if (prompts.empty()) throw DataError("eval_accept: empty prompt set");
  if (cfg.max_new < 0) throw ParameterError("eval_accept: max_new must be >= 0");
  const auto t0 = std::chrono::steady_clock::now();
  const int n = static_cast<int>(prompts.size());
  std::vector<DecodeResult> results(static_cast<std::size_t>(n));
  if (cfg.autoregressive) {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      auto& r = results[i];
      r.tokens = model.autoregressive_generate(prompts[i], cfg.max_new);
      for (int k = 0; k < cfg.max_new; ++k) r.metrics.record_forward(0);
    }
  } else {
    const SpeculativeDecoder decoder(model, proj, cfg.mode);
    std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      try {
        results[i] = decoder.decode(prompts[i], cfg.max_new, tmpl);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!errors[i].empty()) throw ContractError("eval_accept: prompt " + std::to_string(i) + ": " + errors[i]);
    }
  }
  AcceptEval out;
  for (auto& r : results) {
    out.metrics.merge(r.metrics);
    out.outputs.push_back(std::move(r.tokens));
  }
  out.seconds = seconds_since(t0);
  return out;
}

ExperimentReport accept_report(const AcceptEval& eval, const TreeTemplate& tmpl, const AcceptConfig& cfg,
                               std::uint64_t seed) {
  ExperimentReport r;
  r.name = "eval-accept";
  r.seed = seed;
  r.config = {{"max_new", cfg.max_new},
              {"mode", cfg.autoregressive ? "autoregressive" : (cfg.mode == DraftMode::kFused ? "fused" : "two-pass")},
              {"template", tmpl.to_json()},
              {"template_size", tmpl.size()},
              {"prompts", eval.outputs.size()}};
  const auto& m = eval.metrics;
  std::vector<double> x, y;
  for (std::size_t k = 0; k < m.accept_histogram.size(); ++k) {
    x.push_back(static_cast<double>(k));
    y.push_back(static_cast<double>(m.accept_histogram[k]));
  }
  r.series.push_back({"accept_histogram", x, y});
  r.series.push_back({"tokens_per_forward", {0.0}, {eval.tokens_per_forward()}});
  r.series.push_back({"mean_accepted", {0.0}, {eval.mean_accepted()}});
  std::vector<double> sx, sy;
  for (std::size_t i = 0; i < m.step_trials.size(); ++i) {
    sx.push_back(static_cast<double>(i + 1));
    sy.push_back(m.step_accuracy(static_cast<int>(i) + 1));
  }
  if (!sy.empty()) r.series.push_back({"step_accuracy", sx, sy});
  r.extra["metrics"] = m.to_json();
  r.extra["reference"] = {{"binding", false},
                          {"acceptance_length", 2.306},
                          {"template", "T16"},
                          {"host_model", "LLaMA2-13B"},
                          {"dataset", "XSum"},
                          {"note", "published figure for a 13B host; not comparable at toy scale"}};
  r.timing = {{"seconds", eval.seconds},
              {"tokens_per_second", eval.seconds > 0 ? static_cast<double>(m.emitted) / eval.seconds : 0.0}};
  return r;
}

// --- refinement -------------------------------------------------------------

std::vector<std::vector<double>> refine_trajectory(const Model& model, const ProjectionSet& proj,
                                                   const ProbePoint& point) {
  const auto& cfg = model.config();
  const int K = proj.K();
  if (K < 1) throw ContractError("refine_trajectory: no projections");
  proj.validate(cfg);
  if (point.prefix.empty() || static_cast<int>(point.truth.size()) < K) {
    throw DataError("refine_trajectory: probe point needs a prefix and K truth tokens");
  }
  // Real rows: the prefix followed by the greedy continuation, so the row at
  // source + i holds the token whose state step i stands in for.
  std::vector<int> real = point.prefix;
  real.insert(real.end(), point.truth.begin(), point.truth.begin() + K);
  const int R = static_cast<int>(real.size());
  const int src = static_cast<int>(point.prefix.size()) - 1;
  if (R > cfg.max_seq_len) throw CapacityError("refine_trajectory: probe exceeds max_seq_len");

  const int total = R + K;
  AttentionSpec spec;
  spec.mask = BoolMatrix(total, total);
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c <= r; ++c) spec.mask.set(r, c, true);
    spec.position_ids.push_back(r);
  }
  for (int i = 1; i <= K; ++i) {
    const int row = R + i - 1;
    for (int c = 0; c <= src; ++c) spec.mask.set(row, c, true);
    if (!proj.masked) {
      for (int k = 1; k < i; ++k) spec.mask.set(row, R + k - 1, true);
    }
    spec.mask.set(row, row, true);
    spec.position_ids.push_back(src + i);
  }

  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, cfg, model.weights(), false);
  std::vector<Injection<float>> inj;
  for (const auto& p : proj.projections) {
    inj.push_back({p.layer, tape.ref(p.weight, false), tape.ref(p.bias, false), {src}, std::nullopt});
  }
  auto x = g.embed(real, std::vector<int>(spec.position_ids.begin(), spec.position_ids.begin() + R));
  auto run = run_layers<float>(g, x, 0, cfg.n_layers, spec, nullptr, inj, true);

  std::vector<std::vector<double>> out;
  for (int i = 1; i <= K; ++i) {
    std::vector<double> cos;
    for (int t = proj.step(i).layer; t <= cfg.n_layers; ++t) {
      const auto& h = run.per_layer[static_cast<std::size_t>(t)].value();
      cos.push_back(cosine_similarity(h.row(R + i - 1), h.row(src + i)));
    }
    out.push_back(std::move(cos));
  }
  return out;
}

ExperimentReport probe_refine(const Model& model, const ProjectionSet& proj, const ProbeSets& sets) {
  const int K = proj.K();
  const int L = model.config().n_layers;
  std::vector<std::vector<double>> sum(static_cast<std::size_t>(K));
  for (int i = 1; i <= K; ++i) sum[i - 1].assign(static_cast<std::size_t>(L - proj.step(i).layer + 1), 0.0);
  long count = 0;
  for (const auto& pts : sets) {
    for (const auto& pt : pts) {
      const auto traj = refine_trajectory(model, proj, pt);
      for (int i = 0; i < K; ++i)
        for (std::size_t k = 0; k < traj[i].size(); ++k) sum[i][k] += traj[i][k];
      ++count;
    }
  }
  if (count == 0) throw DataError("probe_refine: no probe points");
  ExperimentReport r;
  r.name = "probe-refine";
  r.config = {{"K", K}, {"layers", proj.layers()}, {"masked", proj.masked}, {"probe_sets", sets.size()}};
  r.seed = 0;
  for (int i = 1; i <= K; ++i) {
    Series s{"step" + std::to_string(i), {}, {}};
    for (std::size_t k = 0; k < sum[i - 1].size(); ++k) {
      s.x.push_back(static_cast<double>(proj.step(i).layer + static_cast<int>(k)));
      s.y.push_back(sum[i - 1][k] / static_cast<double>(count));
    }
    r.series.push_back(std::move(s));
  }
  r.extra["points"] = count;
  return r;
}

// --- layer sweep and ablation --------------------------------------------

ExperimentReport sweep_layers(const Model& model, const std::vector<int>& train_stream,
                              const std::vector<int>& eval_stream, std::vector<int> candidate_layers, int step,
                              const std::vector<Projection>& earlier, const StudyConfig& cfg) {
  const auto& mc = model.config();
  if (candidate_layers.empty()) throw ParameterError("sweep_layers: no candidate layers");
  if (step < 1 || static_cast<int>(earlier.size()) != step - 1) {
    throw DependencyError("sweep_layers: step " + std::to_string(step) + " needs exactly steps 1.." +
                          std::to_string(step - 1) + " trained first");
  }
  const int floor = earlier.empty() ? 0 : earlier.back().layer;
  for (int l : candidate_layers) {
    if (l < 1 || l >= mc.n_layers) {
      throw ParameterError("sweep_layers: candidate layer " + std::to_string(l) + " outside [1, " +
                           std::to_string(mc.n_layers - 1) + "]");
    }
    if (l <= floor) {
      throw ParameterError("sweep_layers: step " + std::to_string(step) + " layer " + std::to_string(l) +
                           " must exceed the step " + std::to_string(step - 1) + " layer " + std::to_string(floor));
    }
  }
  std::sort(candidate_layers.begin(), candidate_layers.end());
  candidate_layers.erase(std::unique(candidate_layers.begin(), candidate_layers.end()), candidate_layers.end());

  const auto sets = protocol_points(model, eval_stream, step, cfg.protocol);
  ExperimentReport r;
  r.name = "sweep-layers";
  r.config = study_json(cfg);
  r.config["step"] = step;
  r.config["earlier_layers"] = [&] {
    std::vector<int> v;
    for (const auto& e : earlier) v.push_back(e.layer);
    return v;
  }();
  r.seed = cfg.train.seed;
  r.notes.push_back(protocol_note(cfg.protocol));
  Series top1{"top1", {}, {}}, kl{"heldout_kl", {}, {}};
  for (int layer : candidate_layers) {
    const auto t0 = std::chrono::steady_clock::now();
    auto init = init_projection(step, layer, mc.d_model, cfg.train.seed, cfg.train.init_noise);
    auto trained = train_projection(model, train_stream, std::move(init), earlier, cfg.train).projection;
    ProjectionSet ps;
    ps.masked = cfg.train.visibility == PseudoVisibility::kMasked;
    ps.projections = earlier;
    ps.projections.push_back(trained);
    const auto table = averaged_table(sets, firp_drafter(model, ps), step, cfg.protocol.max_rank);
    top1.x.push_back(layer);
    top1.y.push_back(table.at(step, 1));
    kl.x.push_back(layer);
    kl.y.push_back(evaluate_firp_loss(model, eval_stream, trained, earlier, cfg.train.visibility, cfg.train.seq_len,
                                      cfg.eval_windows));
    r.timing["layer" + std::to_string(layer)] = seconds_since(t0);
  }
  r.series.push_back(std::move(top1));
  r.series.push_back(std::move(kl));
  return r;
}

MaskDiff training_mask_diff(const std::vector<int>& tokens, const Projection& proj,
                            const std::vector<Projection>& earlier) {
  const auto cur = build_training_sequence(tokens, proj, earlier, PseudoVisibility::kCurriculum);
  const auto msk = build_training_sequence(tokens, proj, earlier, PseudoVisibility::kMasked);
  const int n = cur.n;
  const int groups = static_cast<int>(earlier.size()) + 1;
  // masked row/column -> curriculum row/column: real rows map to themselves,
  // the single pseudo group maps to the curriculum's last group
  auto map = [&](int i) { return i < n ? i : cur.pseudo_row(groups - 1, i - n); };
  const int total = cur.spec.mask.rows();
  BoolMatrix embedded(total, total);
  std::vector<bool> present(static_cast<std::size_t>(total), false);
  for (int r = 0; r < msk.spec.mask.rows(); ++r) {
    present[map(r)] = true;
    for (int c = 0; c < msk.spec.mask.cols(); ++c) embedded.set(map(r), map(c), msk.spec.mask(r, c));
  }
  MaskDiff d;
  for (int r = 0; r < total; ++r) {
    if (!present[r]) continue;
    for (int c = 0; c < total; ++c) {
      if (embedded(r, c) == cur.spec.mask(r, c)) continue;
      ++d.differing;
      if (r < n || c < n || c == r) d.pseudo_only = false;
    }
  }
  return d;
}

AblationResult ablate_mask(const Model& model, const std::vector<int>& train_stream,
                           const std::vector<int>& eval_stream, const Projection& step1, int layer2,
                           const StudyConfig& cfg) {
  const auto& mc = model.config();
  if (step1.step != 1) throw DependencyError("ablate_mask: needs the trained step-1 projection");
  if (layer2 <= step1.layer || layer2 >= mc.n_layers) {
    throw ParameterError("ablate_mask: step-2 layer " + std::to_string(layer2) + " must lie in (" +
                         std::to_string(step1.layer) + ", " + std::to_string(mc.n_layers) + ")");
  }
  const auto init = init_projection(2, layer2, mc.d_model, cfg.train.seed, cfg.train.init_noise);
  const auto sets = protocol_points(model, eval_stream, 2, cfg.protocol);

  AblationResult out;
  ExperimentReport& r = out.report;
  r.name = "ablate-mask";
  r.config = study_json(cfg);
  r.config["layers"] = {step1.layer, layer2};
  r.seed = cfg.train.seed;
  r.notes.push_back(protocol_note(cfg.protocol));
  for (bool masked : {false, true}) {
    const auto t0 = std::chrono::steady_clock::now();
    FirpTrainConfig tc = cfg.train;
    tc.visibility = masked ? PseudoVisibility::kMasked : PseudoVisibility::kCurriculum;
    auto trained = train_projection(model, train_stream, init, {step1}, tc).projection;
    ProjectionSet ps;
    ps.masked = masked;
    ps.projections = {step1, trained};
    const auto table = averaged_table(sets, firp_drafter(model, ps), 2, cfg.protocol.max_rank);
    const std::string arm = masked ? "masked" : "no_masked";
    r.series.push_back({arm + ".step2.topk", ranks(table.max_rank()), cumulative_topk(table, 2)});
    r.extra[arm] = {{"top1", table.at(2, 1)},
                    {"heldout_kl", evaluate_firp_loss(model, eval_stream, trained, {step1}, tc.visibility, tc.seq_len,
                                                      cfg.eval_windows)}};
    r.timing[arm] = seconds_since(t0);
    (masked ? out.masked : out.no_masked) = std::move(trained);
  }
  const auto windows = chunk_windows(train_stream, cfg.train.seq_len);
  if (!windows.empty()) {
    const auto diff = training_mask_diff(windows.front(), out.no_masked, {step1});
    r.extra["mask_diff"] = {{"differing_cells", diff.differing}, {"pseudo_only", diff.pseudo_only}};
  }
  return out;
}

// --- baselines --------------------------------------------------------------

std::string to_string(BaselineKind kind) { return kind == BaselineKind::kMedusaHead ? "medusa_head" : "early_exit"; }

BaselineKind parse_baseline_kind(const std::string& name) {
  if (name == "medusa_head") return BaselineKind::kMedusaHead;
  if (name == "early_exit") return BaselineKind::kEarlyExit;
  throw ParameterError("unknown baseline kind '" + name + "' (expected medusa_head or early_exit)");
}

PredictionHead init_head(const Model& model, int step, int layer) {
  const auto& cfg = model.config();
  const auto& w = model.weights();
  if (layer < 1 || layer > cfg.n_layers) throw ParameterError("head layer outside [1, n_layers]");
  PredictionHead h{step, layer, Tensor({cfg.vocab_size, cfg.d_model}), Tensor({cfg.vocab_size})};
  for (int v = 0; v < cfg.vocab_size; ++v) {
    for (int k = 0; k < cfg.d_model; ++k) {
      const float out = w.lm_head.empty() ? w.token_embedding(v, k) : w.lm_head(k, v);
      h.weight(v, k) = w.final_norm[k] * out;
    }
  }
  return h;
}

namespace {

ad::Var<float> head_logits(ad::Var<float> h, ad::Var<float> weight, ad::Var<float> bias, ad::Var<float> ones) {
  auto normed = ad::rmsnorm(h, ones, static_cast<float>(kNormEps));
  return ad::add_bias(ad::matmul(normed, ad::transpose(weight)), bias);
}

}  // namespace

std::vector<PredictionHead> train_heads(BaselineKind kind, const Model& model, const std::vector<int>& train_stream,
                                        int K, const std::vector<int>& layers, const FirpTrainConfig& cfg) {
  const auto& mc = model.config();
  if (K < 1) throw ParameterError("train_heads: K must be >= 1");
  if (kind == BaselineKind::kEarlyExit && static_cast<int>(layers.size()) != K) {
    throw ParameterError("train_heads: early_exit needs one layer per step");
  }
  if (cfg.seq_len < K + 1) throw ParameterError("train_heads: seq_len leaves no supervised rows");
  check_tokens(mc, train_stream);
  auto windows = chunk_windows(train_stream, cfg.seq_len);
  if (windows.empty()) throw DataError("train_heads: corpus shorter than one window");

  std::vector<PredictionHead> heads;
  for (int i = 1; i <= K; ++i) {
    heads.push_back(init_head(model, i, kind == BaselineKind::kMedusaHead ? mc.n_layers : layers[i - 1]));
  }
  std::vector<AdamState> w_state(K), b_state(K);
  std::mt19937_64 rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  const Tensor ones = [&] {
    Tensor t({mc.d_model});
    std::fill(t.values().begin(), t.values().end(), 1.0f);
    return t;
  }();

  int update = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<Trace> traces;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        traces.push_back(trace_tokens(model, windows[order[k]]));
      }
      for (auto& head : heads) {
        const int i = head.step;
        const int n = cfg.seq_len;
        ad::Tape<float> tape;
        auto w = tape.ref(head.weight, true);
        auto b = tape.ref(head.bias, true);
        auto g1 = tape.ref(ones, false);
        std::vector<ad::Var<float>> losses;
        std::size_t rows = 0;
        for (const auto& tr : traces) {
          auto h = tape.constant(rows_of(tr.hidden[static_cast<std::size_t>(head.layer)], 0, n - i));
          const Tensor target = softmax(rows_of(tr.logits, i, n - i));
          losses.push_back(ad::kl_to_target(head_logits(h, w, b, g1), target, static_cast<float>(kKlEpsilon)));
          rows += static_cast<std::size_t>(n - i);
        }
        auto total = losses.front();
        for (std::size_t k = 1; k < losses.size(); ++k) total = ad::add(total, losses[k]);
        total = ad::scale(total, 1.0f / static_cast<float>(rows));
        if (!std::isfinite(total.value()[0])) {
          throw TrainingError(to_string(kind) + " head step " + std::to_string(i) + ": non-finite loss at update " +
                              std::to_string(update));
        }
        tape.backward(total);
        std::vector<Tensor> grads{tape.grad(w), tape.grad(b)};
        clip_global_norm(grads, cfg.grad_clip);
        const std::string prefix = to_string(kind) + "." + std::to_string(i);
        adamw_step(head.weight, grads[0], w_state[i - 1], cfg.adam, prefix + ".W");
        adamw_step(head.bias, grads[1], b_state[i - 1], cfg.adam, prefix + ".b");
      }
      ++update;
    }
  }
  return heads;
}

Drafter head_drafter(const Model& model, const std::vector<PredictionHead>& heads) {
  return [&model, heads](const std::vector<int>& prefix) {
    const auto tr = trace_tokens(model, prefix);
    const int last = static_cast<int>(prefix.size()) - 1;
    const int d = model.config().d_model;
    Tensor out({static_cast<int>(heads.size()), model.config().vocab_size});
    for (std::size_t k = 0; k < heads.size(); ++k) {
      const auto& hd = heads[k];
      const auto h = tr.hidden[static_cast<std::size_t>(hd.layer)].row(last);
      double ms = 0;
      for (float v : h) ms += double(v) * v;
      const float inv = static_cast<float>(1.0 / std::sqrt(ms / d + kNormEps));
      for (int v = 0; v < out.cols(); ++v) {
        float acc = hd.bias[v];
        for (int c = 0; c < d; ++c) acc += hd.weight(v, c) * (h[c] * inv);
        out(static_cast<int>(k), v) = acc;
      }
    }
    return out;
  };
}

ExperimentReport compare_methods(const std::vector<MethodTable>& tables, const ProbeProtocol& protocol) {
  if (tables.empty()) throw DataError("compare_methods: no methods");
  ExperimentReport r;
  r.name = "baseline";
  r.config = {{"protocol", protocol.to_json()}};
  r.seed = protocol.seeds.empty() ? 0 : protocol.seeds.front();
  r.notes.push_back(protocol_note(protocol));
  for (const auto& m : tables) {
    nlohmann::json top1 = nlohmann::json::array();
    for (int i = 1; i <= m.table.K(); ++i) {
      r.series.push_back({m.method + ".step" + std::to_string(i), ranks(m.table.max_rank()), cumulative_topk(m.table, i)});
      top1.push_back(m.table.at(i, 1));
    }
    r.extra[m.method] = {{"top1", top1}, {"table", m.table.to_json()}};
  }
  return r;
}

}  // namespace firp
