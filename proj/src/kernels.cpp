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

#include "firp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace firp::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

constexpr int kRowBlock = 4;
constexpr int kColBlock = 64;

// Register-tiled row panel. Accumulation over p is sequential for every
// output element, matching the naive reference exactly.
template <typename T, int Rows>
void panel(const T* a, const T* b, T* c, int k, int n, int j0, int width, bool accumulate) {
  T acc[Rows][kColBlock];
  for (int r = 0; r < Rows; ++r) {
    for (int jj = 0; jj < width; ++jj) acc[r][jj] = accumulate ? c[r * n + j0 + jj] : T{0};
  }
  for (int p = 0; p < k; ++p) {
    const T* brow = b + static_cast<std::size_t>(p) * n + j0;
    for (int r = 0; r < Rows; ++r) {
      const T ar = a[static_cast<std::size_t>(r) * k + p];
      if (width == kColBlock) {
        for (int jj = 0; jj < kColBlock; ++jj) acc[r][jj] += ar * brow[jj];
      } else {
        for (int jj = 0; jj < width; ++jj) acc[r][jj] += ar * brow[jj];
      }
    }
  }
  for (int r = 0; r < Rows; ++r) {
    for (int jj = 0; jj < width; ++jj) c[r * n + j0 + jj] = acc[r][jj];
  }
}

template <typename T>
std::vector<T> transpose(std::span<const T> x, int rows, int cols) {
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c) * rows + r] = x[static_cast<std::size_t>(r) * cols + c];
  }
  return out;
}

}  // namespace

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  const int full_blocks = m / kRowBlock;
  const int col_tiles = (n + kColBlock - 1) / kColBlock;
#pragma omp parallel for schedule(static) collapse(2)
  for (int blk = 0; blk < full_blocks; ++blk) {
    for (int t = 0; t < col_tiles; ++t) {
      const int i0 = blk * kRowBlock;
      const int j0 = t * kColBlock;
      panel<T, kRowBlock>(a.data() + static_cast<std::size_t>(i0) * k, b.data(),
                          c.data() + static_cast<std::size_t>(i0) * n, k, n, j0, std::min(kColBlock, n - j0),
                          accumulate);
    }
  }
  for (int i = full_blocks * kRowBlock; i < m; ++i) {
    for (int t = 0; t < col_tiles; ++t) {
      const int j0 = t * kColBlock;
      panel<T, 1>(a.data() + static_cast<std::size_t>(i) * k, b.data(), c.data() + static_cast<std::size_t>(i) * n, k,
                  n, j0, std::min(kColBlock, n - j0), accumulate);
    }
  }
}

template <typename T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> g, std::span<T> c, int m, int k, int n) {
  const auto at = transpose<T>(a, m, k);
  matmul<T>(at, g, c, k, m, n, true);
}

template <typename T>
void matmul_nt_acc(std::span<const T> g, std::span<const T> b, std::span<T> c, int m, int k, int n) {
  const auto bt = transpose<T>(b, k, n);
  matmul<T>(g, bt, c, m, n, k, true);
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v, const BoolMatrix& mask,
                       const AttentionDims& dims, T scale, std::span<T> out, std::span<T> probs) {
  const int width = dims.width();
  const int hd = dims.head_dim;
  const int kv = dims.kv_len;
  // Per-head transposed keys so score rows vectorize over columns.
  std::vector<T> kt(static_cast<std::size_t>(dims.n_heads) * hd * kv);
  for (int h = 0; h < dims.n_heads; ++h) {
    for (int c = 0; c < kv; ++c) {
      for (int d = 0; d < hd; ++d) {
        kt[(static_cast<std::size_t>(h) * hd + d) * kv + c] = k[static_cast<std::size_t>(c) * width + h * hd + d];
      }
    }
  }
#pragma omp parallel for schedule(static) collapse(2)
  for (int h = 0; h < dims.n_heads; ++h) {
    for (int r = 0; r < dims.q_len; ++r) {
      T* p = probs.data() + (static_cast<std::size_t>(h) * dims.q_len + r) * kv;
      const T* qr = q.data() + static_cast<std::size_t>(r) * width + h * hd;
      std::fill(p, p + kv, T{0});
      for (int d = 0; d < hd; ++d) {
        const T qd = qr[d];
        const T* krow = kt.data() + (static_cast<std::size_t>(h) * hd + d) * kv;
        for (int c = 0; c < kv; ++c) p[c] += qd * krow[c];
      }
      const auto allowed = mask.row(r);
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < kv; ++c) {
        if (allowed[c]) mx = std::max(mx, p[c] * scale);
      }
      T sum = 0;
      for (int c = 0; c < kv; ++c) {
        if (allowed[c]) {
          p[c] = std::exp(p[c] * scale - mx);
          sum += p[c];
        } else {
          p[c] = 0;
        }
      }
      const T inv = T{1} / sum;
      for (int c = 0; c < kv; ++c) p[c] *= inv;
      T* o = out.data() + static_cast<std::size_t>(r) * width + h * hd;
      std::fill(o, o + hd, T{0});
      for (int c = 0; c < kv; ++c) {
        if (!allowed[c]) continue;
        const T pc = p[c];
        const T* vc = v.data() + static_cast<std::size_t>(c) * width + h * hd;
        for (int d = 0; d < hd; ++d) o[d] += pc * vc[d];
      }
    }
  }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v, std::span<const T> probs,
                        std::span<const T> dout, const BoolMatrix& mask, const AttentionDims& dims, T scale,
                        std::span<T> dq, std::span<T> dk, std::span<T> dv) {
  const int width = dims.width();
  const int hd = dims.head_dim;
  const int kv = dims.kv_len;
  const int ql = dims.q_len;
  // dS = P * (dP - rowsum(P * dP)), dP = dO . V^T
  std::vector<T> ds(static_cast<std::size_t>(dims.n_heads) * ql * kv, T{0});
#pragma omp parallel for schedule(static) collapse(2)
  for (int h = 0; h < dims.n_heads; ++h) {
    for (int r = 0; r < ql; ++r) {
      const T* p = probs.data() + (static_cast<std::size_t>(h) * ql + r) * kv;
      const T* go = dout.data() + static_cast<std::size_t>(r) * width + h * hd;
      T* s = ds.data() + (static_cast<std::size_t>(h) * ql + r) * kv;
      const auto allowed = mask.row(r);
      T dot = 0;
      for (int c = 0; c < kv; ++c) {
        if (!allowed[c]) continue;
        const T* vc = v.data() + static_cast<std::size_t>(c) * width + h * hd;
        T dp = 0;
        for (int d = 0; d < hd; ++d) dp += go[d] * vc[d];
        s[c] = dp;
        dot += p[c] * dp;
      }
      for (int c = 0; c < kv; ++c) s[c] = allowed[c] ? p[c] * (s[c] - dot) * scale : T{0};
      T* gq = dq.data() + static_cast<std::size_t>(r) * width + h * hd;
      for (int c = 0; c < kv; ++c) {
        if (!allowed[c]) continue;
        const T sc = s[c];
        const T* kc = k.data() + static_cast<std::size_t>(c) * width + h * hd;
        for (int d = 0; d < hd; ++d) gq[d] += sc * kc[d];
      }
    }
  }
#pragma omp parallel for schedule(static) collapse(2)
  for (int h = 0; h < dims.n_heads; ++h) {
    for (int c = 0; c < kv; ++c) {
      T* gk = dk.data() + static_cast<std::size_t>(c) * width + h * hd;
      T* gv = dv.data() + static_cast<std::size_t>(c) * width + h * hd;
      for (int r = 0; r < ql; ++r) {
        const T sc = ds[(static_cast<std::size_t>(h) * ql + r) * kv + c];
        const T pc = probs[(static_cast<std::size_t>(h) * ql + r) * kv + c];
        if (sc == T{0} && pc == T{0}) continue;
        const T* qr = q.data() + static_cast<std::size_t>(r) * width + h * hd;
        const T* go = dout.data() + static_cast<std::size_t>(r) * width + h * hd;
        for (int d = 0; d < hd; ++d) {
          gk[d] += sc * qr[d];
          gv[d] += pc * go[d];
        }
      }
    }
  }
}

namespace serial {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T{0};
      for (int p = 0; p < k; ++p) acc += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_tn_acc(std::span<const T> a, std::span<const T> g, std::span<T> c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int i = 0; i < m; ++i) acc += a[static_cast<std::size_t>(i) * k + p] * g[static_cast<std::size_t>(i) * n + j];
      c[static_cast<std::size_t>(p) * n + j] += acc;
    }
  }
}

template <typename T>
void matmul_nt_acc(std::span<const T> g, std::span<const T> b, std::span<T> c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      T acc = 0;
      for (int j = 0; j < n; ++j) acc += g[static_cast<std::size_t>(i) * n + j] * b[static_cast<std::size_t>(p) * n + j];
      c[static_cast<std::size_t>(i) * k + p] += acc;
    }
  }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v, const BoolMatrix& mask,
                       const AttentionDims& dims, T scale, std::span<T> out, std::span<T> probs) {
  const int width = dims.width();
  const int hd = dims.head_dim;
  for (int h = 0; h < dims.n_heads; ++h) {
    for (int r = 0; r < dims.q_len; ++r) {
      std::vector<T> score(dims.kv_len, T{0});
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < dims.kv_len; ++c) {
        if (!mask(r, c)) continue;
        T dot = 0;
        for (int d = 0; d < hd; ++d) {
          dot += q[static_cast<std::size_t>(r) * width + h * hd + d] * k[static_cast<std::size_t>(c) * width + h * hd + d];
        }
        score[c] = dot * scale;
        mx = std::max(mx, score[c]);
      }
      T sum = 0;
      for (int c = 0; c < dims.kv_len; ++c) {
        score[c] = mask(r, c) ? std::exp(score[c] - mx) : T{0};
        sum += score[c];
      }
      const T inv = T{1} / sum;
      for (int c = 0; c < dims.kv_len; ++c) {
        score[c] *= inv;
        probs[(static_cast<std::size_t>(h) * dims.q_len + r) * dims.kv_len + c] = score[c];
      }
      for (int d = 0; d < hd; ++d) {
        T acc = 0;
        for (int c = 0; c < dims.kv_len; ++c) {
          if (mask(r, c)) acc += score[c] * v[static_cast<std::size_t>(c) * width + h * hd + d];
        }
        out[static_cast<std::size_t>(r) * width + h * hd + d] = acc;
      }
    }
  }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v, std::span<const T> probs,
                        std::span<const T> dout, const BoolMatrix& mask, const AttentionDims& dims, T scale,
                        std::span<T> dq, std::span<T> dk, std::span<T> dv) {
  const int width = dims.width();
  const int hd = dims.head_dim;
  for (int h = 0; h < dims.n_heads; ++h) {
    for (int r = 0; r < dims.q_len; ++r) {
      const auto p = [&](int c) { return probs[(static_cast<std::size_t>(h) * dims.q_len + r) * dims.kv_len + c]; };
      const auto go = [&](int d) { return dout[static_cast<std::size_t>(r) * width + h * hd + d]; };
      std::vector<T> dp(dims.kv_len, T{0});
      T dot = 0;
      for (int c = 0; c < dims.kv_len; ++c) {
        if (!mask(r, c)) continue;
        for (int d = 0; d < hd; ++d) dp[c] += go(d) * v[static_cast<std::size_t>(c) * width + h * hd + d];
        dot += p(c) * dp[c];
      }
      for (int c = 0; c < dims.kv_len; ++c) {
        if (!mask(r, c)) continue;
        const T s = p(c) * (dp[c] - dot) * scale;
        for (int d = 0; d < hd; ++d) {
          dq[static_cast<std::size_t>(r) * width + h * hd + d] += s * k[static_cast<std::size_t>(c) * width + h * hd + d];
          dk[static_cast<std::size_t>(c) * width + h * hd + d] += s * q[static_cast<std::size_t>(r) * width + h * hd + d];
          dv[static_cast<std::size_t>(c) * width + h * hd + d] += p(c) * go(d);
        }
      }
    }
  }
}

}  // namespace serial

#define FIRP_INSTANTIATE(T)                                                                                         \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, bool);               \
  template void matmul_tn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int);              \
  template void matmul_nt_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int);              \
  template void attention_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, const BoolMatrix&, \
                                     const AttentionDims&, T, std::span<T>, std::span<T>);                          \
  template void attention_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,                   \
                                      std::span<const T>, std::span<const T>, const BoolMatrix&,                    \
                                      const AttentionDims&, T, std::span<T>, std::span<T>, std::span<T>);           \
  namespace serial {                                                                                                \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, bool);               \
  template void matmul_tn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int);              \
  template void matmul_nt_acc<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int);              \
  template void attention_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, const BoolMatrix&, \
                                     const AttentionDims&, T, std::span<T>, std::span<T>);                          \
  template void attention_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,                   \
                                      std::span<const T>, std::span<const T>, const BoolMatrix&,                    \
                                      const AttentionDims&, T, std::span<T>, std::span<T>, std::span<T>);           \
  }

FIRP_INSTANTIATE(float)
FIRP_INSTANTIATE(double)

#undef FIRP_INSTANTIATE

}  // namespace firp::kernels
