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

// Dense kernels behind the autodiff ops. Each kernel exists twice: the
// OpenMP version used by the library, and a naive serial reference in
// kernels::serial that the tests compare against.
//
// Every kernel computes an output row from its own input row with a fixed
// accumulation order, so a row's result does not depend on how many other
// rows are in the batch. Batched tree verification relies on this to match
// one-token-at-a-time decoding bit for bit.

#include <span>

#include "firp/tensor.hpp"

namespace firp::kernels {

struct AttentionDims {
  int q_len = 0;
  int kv_len = 0;
  int n_heads = 1;
  int head_dim = 0;
  int width() const { return n_heads * head_dim; }
};

// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
            bool accumulate = false);

// c[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> g, std::span<T> c, int m, int k, int n);

// c[m,k] += g[m,n] * b[k,n]^T
template <typename T>
void matmul_nt_acc(std::span<const T> g, std::span<const T> b, std::span<T> c, int m, int k, int n);

// Multi-head masked attention. q: [q_len, width], k/v: [kv_len, width],
// out: [q_len, width], probs: [n_heads, q_len, kv_len] (zero where masked).
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       const BoolMatrix& mask, const AttentionDims& dims, T scale, std::span<T> out,
                       std::span<T> probs);

// Accumulates into dq, dk, dv.
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, const BoolMatrix& mask,
                        const AttentionDims& dims, T scale, std::span<T> dq, std::span<T> dk,
                        std::span<T> dv);

// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();

namespace serial {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n,
            bool accumulate = false);

template <typename T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> g, std::span<T> c, int m, int k, int n);

template <typename T>
void matmul_nt_acc(std::span<const T> g, std::span<const T> b, std::span<T> c, int m, int k, int n);

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       const BoolMatrix& mask, const AttentionDims& dims, T scale, std::span<T> out,
                       std::span<T> probs);

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, const BoolMatrix& mask,
                        const AttentionDims& dims, T scale, std::span<T> dq, std::span<T> dk,
                        std::span<T> dv);

}  // namespace serial
}  // namespace firp::kernels
