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

// OpenMP kernels against their serial references, plus one full-model
// verification forward.

#include <benchmark/benchmark.h>

#include <random>

#include "firp/decode.hpp"
#include "firp/kernels.hpp"

namespace {

using firp::Tensor;
namespace k = firp::kernels;

Tensor random(firp::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

template <bool kParallel>
void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random({n, n}, 1), b = random({n, n}, 2);
  Tensor c({n, n});
  for (auto _ : state) {
    if constexpr (kParallel) {
      k::matmul<float>(a.values(), b.values(), c.values(), n, n, n);
    } else {
      k::serial::matmul<float>(a.values(), b.values(), c.values(), n, n, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
  state.counters["threads"] = kParallel ? k::max_threads() : 1;
}

template <bool kParallel>
void BM_Attention(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  const k::AttentionDims dims{len, len, 4, 32};
  const Tensor q = random({len, dims.width()}, 3), kk = random({len, dims.width()}, 4),
               v = random({len, dims.width()}, 5);
  firp::BoolMatrix mask(len, len);
  for (int r = 0; r < len; ++r)
    for (int c = 0; c <= r; ++c) mask.set(r, c);
  Tensor out({len, dims.width()}), probs({dims.n_heads, len, len});
  const float scale = 1.0f / std::sqrt(static_cast<float>(dims.head_dim));
  for (auto _ : state) {
    if constexpr (kParallel) {
      k::attention_forward<float>(q.values(), kk.values(), v.values(), mask, dims, scale, out.values(), probs.values());
    } else {
      k::serial::attention_forward<float>(q.values(), kk.values(), v.values(), mask, dims, scale, out.values(),
                                          probs.values());
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["threads"] = kParallel ? k::max_threads() : 1;
}

// Prefill of a 64-token prompt on the default-size model.
void BM_Prefill(benchmark::State& state) {
  firp::ModelConfig cfg;
  const firp::Model model(cfg, firp::init_weights(cfg, 1));
  std::vector<int> prompt(64);
  for (int i = 0; i < 64; ++i) prompt[i] = (i * 7) % cfg.vocab_size;
  for (auto _ : state) {
    firp::KvCache cache(cfg);
    benchmark::DoNotOptimize(model.forward_tokens(prompt, cache));
  }
}

BENCHMARK(BM_Matmul<true>)->Name("matmul/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Attention<true>)->Name("attention/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Prefill)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
