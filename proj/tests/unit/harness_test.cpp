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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "firp/errors.hpp"
#include "firp/harness.hpp"
#include "firp/tensor_ops.hpp"
#include "test_util.hpp"

namespace firp {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 16;
  c.n_layers = 4;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 64;
  return c;
}

std::vector<int> periodic_stream(int n, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> s;
  while (static_cast<int>(s.size()) < n) {
    const int period = 2 + static_cast<int>(rng() % 4);
    std::vector<int> motif;
    for (int k = 0; k < period; ++k) motif.push_back(static_cast<int>(rng() % vocab));
    for (int r = 0; r < 8; ++r) s.insert(s.end(), motif.begin(), motif.end());
  }
  s.resize(static_cast<std::size_t>(n));
  return s;
}

struct HarnessTest : ::testing::Test {
  ModelConfig cfg = small_config();
  Model model{cfg, init_weights(cfg, 21, 0.4)};
  std::vector<int> stream = periodic_stream(600, 12, 3);

  ProjectionSet projections(int K, double noise = 0.05) const {
    ProjectionSet s;
    for (int i = 1; i <= K; ++i) s.projections.push_back(init_projection(i, i, cfg.d_model, 40 + i, noise));
    return s;
  }
  ProbeProtocol small_protocol() const {
    ProbeProtocol p;
    p.probe = ProbeConfig{3, 24, 3, 6, 1};
    p.seeds = {1, 2};
    return p;
  }
  StudyConfig tiny_study() const {
    StudyConfig s;
    s.train.seq_len = 16;
    s.train.epochs = 1;
    s.train.batch_size = 4;
    s.protocol = small_protocol();
    s.eval_windows = 4;
    return s;
  }
};

TEST(Cosine, IdentityAndOrthogonality) {
  std::vector<float> a{1, 2, 3}, b{-2, 1, 0};
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(a, b), 0.0, 1e-12);
}

TEST(Report, ValidationJsonAndCsv) {
  ExperimentReport r;
  r.name = "x";
  EXPECT_THROW(r.validate(), DataError);
  r.series.push_back({"s", {1, 2}, {0.5, 0.25}});
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(r.to_csv(), "series,x,y\ns,1,0.5\ns,2,0.25\n");
  r.timing["seconds"] = 3.0;
  EXPECT_FALSE(r.payload().contains("timing"));
  EXPECT_EQ(r.to_json()["series"]["s"]["y"][1], 0.25);
  r.series.push_back({"bad", {1}, {}});
  EXPECT_THROW(r.validate(), DataError);
  EXPECT_THROW(r.get("nope"), DataError);
}

TEST_F(HarnessTest, AutoregressiveModeIsOneTokenPerForward) {
  auto prompts = sample_prompts(stream, 4, 10, 2);
  AcceptConfig ac;
  ac.max_new = 12;
  ac.autoregressive = true;
  auto ev = eval_accept(model, {}, TreeTemplate{}, prompts, ac);
  EXPECT_EQ(ev.tokens_per_forward(), 1.0);
  EXPECT_EQ(ev.metrics.forward_count, 48);
  for (std::size_t i = 0; i < prompts.size(); ++i) EXPECT_EQ(ev.outputs[i], model.autoregressive_generate(prompts[i], 12));
  EXPECT_THROW(eval_accept(model, {}, TreeTemplate{}, {}, ac), DataError);
}

TEST_F(HarnessTest, SpeculativeEvalIsLosslessAndConserves) {
  auto prompts = sample_prompts(stream, 6, 8, 5);
  auto ps = projections(3);
  AcceptConfig ac;
  ac.max_new = 20;
  auto ev = eval_accept(model, ps, TreeTemplate::full(3, 2), prompts, ac);
  long accepted = 0;
  for (std::size_t k = 0; k < ev.metrics.accept_histogram.size(); ++k) {
    accepted += static_cast<long>(k) * ev.metrics.accept_histogram[k];
  }
  EXPECT_EQ(ev.metrics.emitted, accepted + ev.metrics.forward_count);
  EXPECT_EQ(ev.metrics.emitted, 6 * 20);
  for (std::size_t i = 0; i < prompts.size(); ++i) EXPECT_EQ(ev.outputs[i], model.autoregressive_generate(prompts[i], 20));
  auto rep = accept_report(ev, TreeTemplate::full(3, 2), ac, 1);
  EXPECT_NO_THROW(rep.validate());
  EXPECT_FALSE(rep.extra["reference"]["binding"].get<bool>());
  EXPECT_EQ(rep.get("tokens_per_forward").y[0], ev.tokens_per_forward());
}

TEST_F(HarnessTest, UntrainedProjectionsRarelyAccept) {
  // Random-logit drafts over a 12-token vocabulary on random prompts.
  std::mt19937_64 rng(8);
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < 8; ++i) prompts.push_back(testing::random_ints(rng, 8, cfg.vocab_size));
  ProjectionSet ps;
  for (int i = 1; i <= 3; ++i) {
    Projection p{i, i, testing::random_tensor<float>({16, 16}, rng, 2.0), testing::random_tensor<float>({16}, rng, 2.0)};
    ps.projections.push_back(p);
  }
  AcceptConfig ac;
  ac.max_new = 24;
  auto ev = eval_accept(model, ps, TreeTemplate::chain(3), prompts, ac);
  EXPECT_LT(ev.mean_accepted(), 0.25);
}

// Oracle: with one projection the pseudo row sees exactly the prefix and
// itself, which is a plain causal forward of (prefix, pseudo) from layer t.
TEST_F(HarnessTest, RefineTrajectoryMatchesCausalReplay) {
  std::mt19937_64 rng(12);
  for (int layer = 1; layer <= 3; ++layer) {
    ProjectionSet ps;
    ps.projections.push_back(init_projection(1, layer, 16, 90 + layer, 0.3));
    ProbePoint pt;
    pt.prefix = testing::random_ints(rng, 9, cfg.vocab_size);
    auto gen = model.autoregressive_generate(pt.prefix, 2);
    pt.truth.assign(gen.end() - 2, gen.end());
    const auto traj = refine_trajectory(model, ps, pt);
    ASSERT_EQ(traj.size(), 1u);
    ASSERT_EQ(static_cast<int>(traj[0].size()), cfg.n_layers - layer + 1);

    const int n = 9;
    auto h = model.forward_layers(model.embed(pt.prefix), 0, layer, AttentionSpec::causal(n));
    auto pseudo = predict_pseudo({testing::row_of(h.values, n - 1), layer}, ps.step(1));
    Tensor ext({n + 1, 16});
    for (int r = 0; r < n; ++r) std::copy(h.values.row(r).begin(), h.values.row(r).end(), ext.row(r).begin());
    std::copy(pseudo.values.row(0).begin(), pseudo.values.row(0).end(), ext.row(n).begin());
    std::vector<int> real = pt.prefix;
    real.push_back(pt.truth[0]);
    HiddenMatrix cur{ext, layer};
    auto truth_h = model.embed(real);
    truth_h = model.forward_layers(truth_h, 0, layer, AttentionSpec::causal(n + 1));
    for (int t = layer; t <= cfg.n_layers; ++t) {
      const double expect = cosine_similarity(cur.values.row(n), truth_h.values.row(n));
      EXPECT_NEAR(traj[0][t - layer], expect, 1e-5) << "layer " << t;
      if (t == cfg.n_layers) break;
      cur = model.forward_layers(cur, t, t + 1, AttentionSpec::causal(n + 1));
      truth_h = model.forward_layers(truth_h, t, t + 1, AttentionSpec::causal(n + 1));
    }
  }
}

TEST_F(HarnessTest, ProbeRefineSeriesPerStep) {
  auto ps = projections(2);
  auto sets = protocol_points(model, stream, 2, small_protocol());
  auto rep = probe_refine(model, ps, sets);
  EXPECT_NO_THROW(rep.validate());
  EXPECT_EQ(rep.get("step1").x, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(rep.get("step2").x, (std::vector<double>{2, 3, 4}));
  for (double c : rep.get("step1").y) EXPECT_LE(std::abs(c), 1.0 + 1e-9);
}

TEST_F(HarnessTest, ProtocolPointsArePerSeedAndReproducible) {
  auto p = small_protocol();
  auto a = protocol_points(model, stream, 2, p);
  auto b = protocol_points(model, stream, 2, p);
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(a[0].size(), 9u);
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t k = 0; k < a[s].size(); ++k) EXPECT_EQ(a[s][k].prefix, b[s][k].prefix);
  EXPECT_NE(a[0][0].prefix, a[1][0].prefix);
  p.seeds.clear();
  EXPECT_THROW(protocol_points(model, stream, 2, p), ParameterError);
}

TEST_F(HarnessTest, SweepValidatesAndCoversEveryLayerOnce) {
  auto study = tiny_study();
  EXPECT_THROW(sweep_layers(model, stream, stream, {4}, 1, {}, study), ParameterError);
  EXPECT_THROW(sweep_layers(model, stream, stream, {0}, 1, {}, study), ParameterError);
  EXPECT_THROW(sweep_layers(model, stream, stream, {2}, 2, {}, study), DependencyError);
  auto step1 = init_projection(1, 2, 16, 1);
  EXPECT_THROW(sweep_layers(model, stream, stream, {2}, 2, {step1}, study), ParameterError);

  auto one = sweep_layers(model, stream, stream, {2}, 1, {}, study);
  EXPECT_EQ(one.get("top1").x, std::vector<double>{2});
  auto many = sweep_layers(model, stream, stream, {3, 1, 3}, 1, {}, study);
  EXPECT_EQ(many.get("top1").x, (std::vector<double>{1, 3}));
  EXPECT_NO_THROW(many.validate());
  auto two = sweep_layers(model, stream, stream, {3}, 2, {step1}, study);
  EXPECT_EQ(two.config["earlier_layers"], nlohmann::json::array({2}));
}

TEST_F(HarnessTest, MaskDiffIsPseudoToPseudoOnly) {
  std::mt19937_64 rng(4);
  auto toks = testing::random_ints(rng, 10, cfg.vocab_size);
  auto p1 = init_projection(1, 1, 16, 1), p2 = init_projection(2, 2, 16, 2), p3 = init_projection(3, 3, 16, 3);
  auto none = training_mask_diff(toks, p1, {});
  EXPECT_EQ(none.differing, 0);
  auto d2 = training_mask_diff(toks, p2, {p1});
  EXPECT_TRUE(d2.pseudo_only);
  // Step-2 pseudo row j sees step-1 pseudo row j: one cell per source.
  EXPECT_EQ(d2.differing, 10);
  auto d3 = training_mask_diff(toks, p3, {p1, p2});
  EXPECT_TRUE(d3.pseudo_only);
  EXPECT_EQ(d3.differing, 20);
}

TEST_F(HarnessTest, AblationArmsShareEverythingButTheMask) {
  auto study = tiny_study();
  auto step1 = train_projection(model, stream, init_projection(1, 1, 16, 1), {}, study.train).projection;
  auto a = ablate_mask(model, stream, stream, step1, 3, study);
  auto b = ablate_mask(model, stream, stream, step1, 3, study);
  EXPECT_EQ(a.report.payload(), b.report.payload());
  EXPECT_NO_THROW(a.report.validate());
  EXPECT_TRUE(a.report.extra["mask_diff"]["pseudo_only"].get<bool>());
  EXPECT_GT(a.report.extra["mask_diff"]["differing_cells"].get<long>(), 0);
  EXPECT_FALSE(a.masked.weight == a.no_masked.weight);
  EXPECT_THROW(ablate_mask(model, stream, stream, step1, 1, study), ParameterError);
  EXPECT_THROW(ablate_mask(model, stream, stream, init_projection(2, 2, 16, 1), 3, study), DependencyError);
}

TEST_F(HarnessTest, FinalLayerHeadStartsAsTheModelHead) {
  std::mt19937_64 rng(5);
  for (bool tied : {false, true}) {
    auto c = cfg;
    c.tie_embeddings = tied;
    Model m(c, init_weights(c, 6, 0.4));
    auto head = init_head(m, 1, c.n_layers);
    auto prefix = testing::random_ints(rng, 7, c.vocab_size);
    auto drafts = head_drafter(m, {head})(prefix);
    KvCache cache(c);
    auto logits = m.forward_tokens(prefix, cache);
    for (int v = 0; v < c.vocab_size; ++v) EXPECT_NEAR(drafts(0, v), logits(6, v), 1e-4);
  }
}

TEST_F(HarnessTest, HeadsTrainAndCompareOnSharedPoints) {
  FirpTrainConfig tc;
  tc.seq_len = 16;
  tc.epochs = 1;
  tc.adam.lr = 1e-2;
  EXPECT_THROW(train_heads(BaselineKind::kEarlyExit, model, stream, 2, {1}, tc), ParameterError);
  auto medusa = train_heads(BaselineKind::kMedusaHead, model, stream, 2, {}, tc);
  auto early = train_heads(BaselineKind::kEarlyExit, model, stream, 2, {1, 2}, tc);
  ASSERT_EQ(medusa.size(), 2u);
  EXPECT_EQ(medusa[1].layer, cfg.n_layers);
  EXPECT_EQ(early[1].layer, 2);
  EXPECT_FALSE(medusa[0].weight == init_head(model, 1, cfg.n_layers).weight);

  auto proto = small_protocol();
  auto sets = protocol_points(model, stream, 2, proto);
  auto ps = projections(2);
  std::vector<MethodTable> tables{{"firp", averaged_table(sets, firp_drafter(model, ps), 2, 10)},
                                  {"medusa_head", averaged_table(sets, head_drafter(model, medusa), 2, 10)},
                                  {"early_exit", averaged_table(sets, head_drafter(model, early), 2, 10)}};
  auto rep = compare_methods(tables, proto);
  EXPECT_NO_THROW(rep.validate());
  EXPECT_EQ(rep.series.size(), 6u);
  for (const auto& s : rep.series) {
    ASSERT_EQ(s.y.size(), 10u);
    for (std::size_t k = 1; k < s.y.size(); ++k) EXPECT_GE(s.y[k], s.y[k - 1]);
    EXPECT_LE(s.y.back(), 1.0 + 1e-9);
  }
  EXPECT_EQ(parse_baseline_kind("early_exit"), BaselineKind::kEarlyExit);
  EXPECT_THROW(parse_baseline_kind("lookahead"), ParameterError);
}

}  // namespace
}  // namespace firp
