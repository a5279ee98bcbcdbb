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

#include "firp/base_training.hpp"
#include "firp/corpus.hpp"
#include "firp/errors.hpp"
#include "firp/firp_train.hpp"
#include "test_util.hpp"

namespace firp {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 64;
  return c;
}

// Predicate oracle for one cell of a training mask. Rows are laid out as
// n real rows followed by one group of n rows per step in `steps`.
bool mask_predicate(int n, const std::vector<int>& steps, bool curriculum, int row, int col) {
  if (row < n) return col < n && col <= row;
  const int g = (row - n) / n, j = (row - n) % n;  // j is 0-based
  if (col == row) return true;
  if (col < n) return col < j + steps[g];           // real position (1-based) < j+i
  const int cg = (col - n) / n, cj = (col - n) % n;
  return curriculum && cj == j && cg < g;
}

TEST(PredictPseudo, IdentityAndPermutation) {
  Projection p{1, 1, Tensor::identity(3), Tensor({3})};
  HiddenMatrix h{Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), 1};
  EXPECT_EQ(predict_pseudo(h, p).values, h.values);
  Projection q{1, 2, Tensor({2, 2}, {0, 1, 1, 0}), Tensor({2}, {1, 1})};
  auto out = predict_pseudo(HiddenMatrix{Tensor({1, 2}, {2, 3}), 2}, q);
  EXPECT_EQ(out.values, Tensor({1, 2}, {4, 3}));
  EXPECT_EQ(out.step, 1);
  EXPECT_EQ(out.layer_index, 2);
  EXPECT_THROW(predict_pseudo(HiddenMatrix{Tensor({1, 2}), 1}, q), ContractError);
}

TEST(PredictPseudo, MatchesPerRowOracle) {
  std::mt19937_64 rng(1);
  Projection p{2, 3, testing::random_tensor({6, 6}, rng), testing::random_tensor({6}, rng)};
  HiddenMatrix h{testing::random_tensor({5, 6}, rng), 3};
  auto out = predict_pseudo(h, p);
  for (int r = 0; r < 5; ++r)
    for (int o = 0; o < 6; ++o) {
      double s = p.bias[o];
      for (int i = 0; i < 6; ++i) s += double(p.weight(o, i)) * h.values(r, i);
      EXPECT_NEAR(out.values(r, o), s, 1e-6);
    }
}

TEST(TrainingMask, SpecExamples) {
  auto m = training_attention_mask(3, 1);
  ASSERT_EQ(m.rows(), 6);
  // row n+j for 1-based j
  EXPECT_TRUE(m(3, 0) && m(3, 3));
  EXPECT_FALSE(m(3, 1));
  EXPECT_TRUE(m(4, 0) && m(4, 1) && m(4, 4));
  EXPECT_FALSE(m(4, 2));
  EXPECT_TRUE(m(5, 0) && m(5, 1) && m(5, 2) && m(5, 5));
  EXPECT_EQ(m.row(3)[4] + m.row(3)[5], 0);
  auto m2 = training_attention_mask(3, 2);
  EXPECT_TRUE(m2(3, 0) && m2(3, 1) && m2(3, 3));
  EXPECT_FALSE(m2(3, 2));
}

TEST(TrainingMask, MatchesPredicate) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> nd(1, 12), id(1, 5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = nd(rng), i = id(rng);
    auto m = training_attention_mask(n, i);
    for (int r = 0; r < 2 * n; ++r)
      for (int c = 0; c < 2 * n; ++c) EXPECT_EQ(m(r, c), mask_predicate(n, {i}, false, r, c)) << n << " " << i;
  }
}

std::vector<Projection> chain(int K, int d) {
  std::vector<Projection> out;
  for (int i = 1; i <= K; ++i) out.push_back(init_projection(i, i, d, 7 + i));
  return out;
}

TEST(TrainingSequence, PositionsAndSupervision) {
  auto projs = chain(3, 8);
  auto b1 = build_training_sequence({1, 2, 3, 4}, projs[0], {});
  // 0-based positions: real 0..3, step-1 pseudo rows at source + 1.
  EXPECT_EQ(std::vector<int>(b1.spec.position_ids.begin() + 4, b1.spec.position_ids.end()),
            (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(b1.alignment.size(), 3u);
  auto b3 = build_training_sequence({1, 2, 3, 4}, projs[2], {projs[0], projs[1]});
  ASSERT_EQ(b3.alignment.size(), 1u);
  EXPECT_EQ(b3.alignment[0], (std::pair<int, int>{b3.pseudo_row(2, 0), 3}));
  EXPECT_THROW(build_training_sequence({1, 2, 3}, projs[2], {projs[0], projs[1]}), DataError);
  EXPECT_THROW(build_training_sequence({1, 2, 3, 4}, projs[2], {projs[0]}), DependencyError);
}

TEST(TrainingSequence, CurriculumAndMaskedAgainstPredicate) {
  auto projs = chain(3, 8);
  for (bool curriculum : {true, false}) {
    for (int n : {4, 6, 9}) {
      const auto vis = curriculum ? PseudoVisibility::kCurriculum : PseudoVisibility::kMasked;
      auto b = build_training_sequence(std::vector<int>(n, 1), projs[2], {projs[0], projs[1]}, vis);
      std::vector<int> steps = curriculum ? std::vector<int>{1, 2, 3} : std::vector<int>{3};
      ASSERT_EQ(b.group_steps, steps);
      const int rows = n * (1 + static_cast<int>(steps.size()));
      ASSERT_EQ(b.spec.mask.rows(), rows);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < rows; ++c) EXPECT_EQ(b.spec.mask(r, c), mask_predicate(n, steps, curriculum, r, c));
        if (r >= n) {
          const int g = (r - n) / n, j = (r - n) % n;
          EXPECT_EQ(b.spec.position_ids[r], j + steps[g]);
        }
      }
    }
  }
  // step 2, curriculum: the step-2 row of source j sees the step-1 row of j
  auto c = build_training_sequence({1, 2, 3, 4, 5}, projs[1], {projs[0]}, PseudoVisibility::kCurriculum);
  EXPECT_TRUE(c.spec.mask(c.pseudo_row(1, 2), c.pseudo_row(0, 2)));
  EXPECT_FALSE(c.spec.mask(c.pseudo_row(1, 2), c.pseudo_row(0, 1)));
  auto m = build_training_sequence({1, 2, 3, 4, 5}, projs[1], {projs[0]}, PseudoVisibility::kMasked);
  EXPECT_EQ(m.spec.mask.rows(), 10);
}

TEST(TrainingSequence, MaskSanity) {
  auto projs = chain(3, 8);
  auto b = build_training_sequence(std::vector<int>(7, 2), projs[2], {projs[0], projs[1]});
  const int n = b.n;
  for (int r = 0; r < b.spec.mask.rows(); ++r) {
    EXPECT_TRUE(b.spec.mask(r, r));
    if (r < n) {
      for (int c = n; c < b.spec.mask.cols(); ++c) EXPECT_FALSE(b.spec.mask(r, c));
    }
  }
  for (auto [p, t] : b.alignment) {
    for (int c = t; c < n; ++c) EXPECT_FALSE(b.spec.mask(p, c));
    EXPECT_EQ(b.spec.position_ids[p], t);
  }
}

TEST(KlLoss, Cases) {
  Tensor logits({4, 5}, {1, 2, 3, 4, 5, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 0, 0, 0, 0, 0});
  EXPECT_NEAR(firp_kl_loss(logits, {{0, 2}}), 0.0, 1e-6);
  // uniform pseudo against a near one-hot target
  Tensor sharp({2, 5}, {0, 0, 0, 0, 0, 40, 0, 0, 0, 0});
  auto p = softmax(Tensor({5}, std::vector<float>(5, 0.0f)));
  auto q = softmax(Tensor({5}, {40, 0, 0, 0, 0}));
  const double expected = kl_divergence(p.values(), q.values());
  EXPECT_GT(expected, 10.0);
  EXPECT_NEAR(firp_kl_loss(sharp, {{0, 1}}), expected, 1e-6 * expected);
  const double one = firp_kl_loss(logits, {{1, 0}});
  EXPECT_NEAR(firp_kl_loss(logits, {{1, 0}, {3, 2}}), 2 * one, 1e-6);
  EXPECT_THROW(firp_kl_loss(logits, {}), DataError);
}

TEST(KlLoss, TapeMatchesPlain) {
  std::mt19937_64 rng(3);
  auto logits = testing::random_tensor({6, 10}, rng, 2.0);
  std::vector<std::pair<int, int>> align{{3, 0}, {4, 1}, {5, 2}};
  ad::Tape<float> tape;
  auto pseudo = ad::gather_rows(tape.constant(logits), {3, 4, 5});
  auto target = ad::gather_rows(tape.constant(logits), {0, 1, 2}).value();
  EXPECT_NEAR(firp_kl_loss<float>(pseudo, target).value()[0], firp_kl_loss(logits, align), 1e-5);
}

struct Fixture {
  ModelConfig cfg = small_config();
  Model model;
  Fixture() : model(cfg, init_weights(cfg, 5, 0.3)) {}
};

TEST(FirpGradients, ProjectionGradientMatchesFiniteDifferences) {
  Fixture f;
  auto wd = f.model.weights().cast<double>();
  const std::vector<int> tokens{1, 5, 2, 7, 3, 3, 9};
  auto p1 = init_projection(1, 1, 8, 3, 0.2);
  auto batch = build_training_sequence(tokens, p1, {});
  auto err = testing::gradient_check(
      {p1.weight.cast<double>(), p1.bias.cast<double>()},
      [&](ad::Tape<double>& tape, const std::vector<ad::Var<double>>& v) {
        TransformerGraph<double> g(tape, f.cfg, wd, false);
        return firp_batch_loss<double>(g, batch, {{v[0], v[1]}});
      });
  EXPECT_LT(err, 1e-3);
}

TEST(FirpGradients, CurriculumStepGradient) {
  ModelConfig cfg = small_config();
  cfg.n_layers = 3;
  Model model(cfg, init_weights(cfg, 8, 0.3));
  auto wd = model.weights().cast<double>();
  auto p1 = init_projection(1, 1, 8, 3, 0.2);
  auto p2 = init_projection(2, 2, 8, 4, 0.2);
  auto batch = build_training_sequence({1, 5, 2, 7, 3, 3}, p2, {p1});
  auto w1 = p1.weight.cast<double>(), b1 = p1.bias.cast<double>();
  auto err = testing::gradient_check(
      {p2.weight.cast<double>(), p2.bias.cast<double>()},
      [&](ad::Tape<double>& tape, const std::vector<ad::Var<double>>& v) {
        TransformerGraph<double> g(tape, cfg, wd, false);
        return firp_batch_loss<double>(g, batch, {{tape.ref(w1, false), tape.ref(b1, false)}, {v[0], v[1]}});
      });
  EXPECT_LT(err, 1e-3);
}

TEST(FirpGradients, BaseParametersReceiveNoGradient) {
  Fixture f;
  auto p1 = init_projection(1, 1, 8, 3);
  auto batch = build_training_sequence({1, 2, 3, 4, 5}, p1, {});
  ad::Tape<float> tape;
  TransformerGraph<float> g(tape, f.cfg, f.model.weights(), false);
  auto w = tape.ref(p1.weight, true), b = tape.ref(p1.bias, true);
  auto loss = firp_batch_loss<float>(g, batch, {{w, b}});
  tape.backward(loss);
  for (const auto& [name, var] : g.params()) {
    EXPECT_FALSE(var.requires_grad()) << name;
    auto grad = tape.grad(var);
    for (float x : grad.values()) EXPECT_EQ(x, 0.0f) << name;
  }
  double norm = 0;
  const auto wgrad = tape.grad(w);
  for (float x : wgrad.values()) norm += std::abs(x);
  EXPECT_GT(norm, 0.0);
}

TEST(FirpLoss, NonNegativeAndZeroWhenPseudoEqualsTarget) {
  Fixture f;
  std::mt19937_64 rng(6);
  auto p1 = init_projection(1, 1, 8, 3, 0.5);
  for (int s = 0; s < 5; ++s) {
    std::vector<int> toks(8);
    for (auto& t : toks) t = static_cast<int>(rng() % 16);
    auto batch = build_training_sequence(toks, p1, {});
    ad::Tape<float> tape;
    TransformerGraph<float> g(tape, f.cfg, f.model.weights(), false);
    auto loss = firp_batch_loss<float>(g, batch, {{tape.ref(p1.weight, false), tape.ref(p1.bias, false)}});
    EXPECT_GE(loss.value()[0], -1e-6);
  }
}

TEST(TrainProjection, FreezesEverythingElse) {
  auto tokens = ByteTokenizer().encode(periodic_text(10, 1));
  for (auto& t : tokens) t %= 16;
  ModelConfig cfg = small_config();
  cfg.n_layers = 3;
  Model model(cfg, init_weights(cfg, 8, 0.3));
  const auto before = model.weights();
  auto p1 = init_projection(1, 1, 8, 3);
  FirpTrainConfig hp;
  hp.seq_len = 16;
  hp.epochs = 1;
  auto r1 = train_projection(model, tokens, p1, {}, hp);
  const Projection frozen = r1.projection;
  auto r2 = train_projection(model, tokens, init_projection(2, 2, 8, 4), {frozen}, hp);
  EXPECT_EQ(frozen.weight, r1.projection.weight);
  std::vector<Tensor> a, b;
  before.for_each([&](const std::string&, const Tensor& t) { a.push_back(t); });
  model.weights().for_each([&](const std::string&, const Tensor& t) { b.push_back(t); });
  EXPECT_EQ(a, b);
  EXPECT_FALSE(r2.losses.empty());
  EXPECT_THROW(train_projection(model, tokens, init_projection(2, 2, 8, 4), {}, hp), DependencyError);
}

TEST(TrainProjection, NonFiniteLossNamesStep) {
  Fixture f;
  auto p = init_projection(1, 1, 8, 3);
  p.weight(0, 0) = std::numeric_limits<float>::infinity();
  std::vector<int> tokens(64, 3);
  FirpTrainConfig hp;
  hp.seq_len = 16;
  try {
    train_projection(f.model, tokens, p, {}, hp);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace firp
