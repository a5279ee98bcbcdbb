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

// Define-by-run reverse-mode autodiff over BasicTensor<T>.
//
// A Tape records every op applied to Vars that belong to it. Ops whose
// inputs are all constants record no backward closure, so inference runs
// through the same code path at no extra cost. A tape lives for one
// forward/backward and is then dropped.

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "firp/errors.hpp"
#include "firp/kernels.hpp"
#include "firp/tensor.hpp"

namespace firp::ad {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(TensorT value, bool requires_grad) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  // Non-owning leaf; the tensor must outlive the tape.
  Var<T> ref(const TensorT& value, bool requires_grad) {
    Node& n = nodes_.emplace_back();
    n.external = &value;
    n.requires_grad = requires_grad;
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(TensorT value) { return leaf(std::move(value), false); }

  Var<T> record(TensorT value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> record(TensorT value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool any = false;
    for (const auto& in : inputs) any = any || requires_grad(in.id);
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = any;
    if (any) n.backward = std::move(fn);
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const TensorT& value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.external ? *n.external : *n.owned;
  }

  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  // Gradient buffer for accumulation, allocated on first touch.
  TensorT& grad_mut(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.empty() && value(id).numel() > 0) n.grad = TensorT(value(id).shape());
    return n.grad;
  }

  // Gradient after backward(); zeros for nodes not on the path to the loss.
  TensorT grad(Var<T> v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.empty()) return TensorT(value(v.id).shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
    if (value(loss.id).numel() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " + to_string(value(loss.id).shape()));
    }
    grad_mut(loss.id)[0] = T{1};
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::optional<TensorT> owned;
    const TensorT* external = nullptr;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

namespace detail {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("vars from different tapes");
}

inline void require_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  BasicTensor<T> out({m, n});
  kernels::matmul<T>(av.values(), bv.values(), out.values(), m, k, n);
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    if (t.requires_grad(ia)) kernels::matmul_nt_acc<T>(g.values(), t.value(ib).values(), t.grad_mut(ia).values(), m, k, n);
    if (t.requires_grad(ib)) kernels::matmul_tn_acc<T>(t.value(ia).values(), g.values(), t.grad_mut(ib).values(), m, k, n);
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + to_string(av.shape()));
  const int r = av.dim(0), c = av.dim(1);
  BasicTensor<T> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(j, i) = av(i, j);
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, r, c](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ia);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga(i, j) += g(j, i);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    for (int id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto& gi = t.grad_mut(id);
      for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_mut(ia);
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, s](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
  });
}

// x[m,n] + bias[n] broadcast over rows; the only broadcast the library allows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::require_same_tape(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (xv.rank() != 2 || bv.numel() != static_cast<std::size_t>(xv.cols())) {
    throw DimensionError("add_bias: " + to_string(xv.shape()) + " + " + to_string(bv.shape()));
  }
  BasicTensor<T> out = xv;
  const int m = xv.rows(), n = xv.cols();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out(r, c) += bv[c];
  const int ix = x.id, ib = bias.id;
  return x.tape->record(std::move(out), {x, bias}, [ix, ib, m, n](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    if (t.requires_grad(ix)) {
      auto& gx = t.grad_mut(ix);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) gb[c] += g(r, c);
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  const int ia = a.id;
  return a.tape->record(BasicTensor<T>::scalar(acc), {a}, [ia](Tape<T>& t, int self) {
    const T g = t.grad_mut(self)[0];
    for (auto& v : t.grad_mut(ia).values()) v += g;
  });
}

// Σ x ⊙ w for a constant weight tensor; handy as a probe loss.
template <typename T>
Var<T> weighted_sum(Var<T> a, const BasicTensor<T>& w) {
  detail::require_shape(a.shape(), w.shape(), "weighted_sum");
  T acc = 0;
  for (std::size_t i = 0; i < w.numel(); ++i) acc += a.value()[i] * w[i];
  const int ia = a.id;
  return a.tape->record(BasicTensor<T>::scalar(acc), {a}, [ia, w](Tape<T>& t, int self) {
    const T g = t.grad_mut(self)[0];
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < w.numel(); ++i) ga[i] += g * w[i];
  });
}

template <typename T>
Var<T> silu(Var<T> a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v = v * detail::sigmoid(v);
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    const auto& x = t.value(ia);
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T s = detail::sigmoid(x[i]);
      ga[i] += g[i] * s * (T{1} + x[i] * (T{1} - s));
    }
  });
}

// tanh approximation
template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v = T(0.5) * v * (T{1} + std::tanh(c * (v + k * v * v * v)));
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    const auto& x = t.value(ia);
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T xi = x[i];
      const T th = std::tanh(c * (xi + k * xi * xi * xi));
      const T d = T(0.5) * (T{1} + th) + T(0.5) * xi * (T{1} - th * th) * c * (T{1} + T{3} * k * xi * xi);
      ga[i] += g[i] * d;
    }
  });
}

template <typename T>
Var<T> rmsnorm(Var<T> x, Var<T> gain, T eps) {
  detail::require_same_tape(x, gain);
  const auto& xv = x.value();
  const int m = xv.rows(), n = xv.cols();
  if (gain.value().numel() != static_cast<std::size_t>(n)) {
    throw DimensionError("rmsnorm: gain " + to_string(gain.shape()) + " for input " + to_string(xv.shape()));
  }
  BasicTensor<T> out(xv.shape());
  std::vector<T> inv(m);
  const auto& gv = gain.value();
  for (int r = 0; r < m; ++r) {
    T ss = 0;
    for (int c = 0; c < n; ++c) ss += xv(r, c) * xv(r, c);
    inv[r] = T{1} / std::sqrt(ss / n + eps);
    for (int c = 0; c < n; ++c) out(r, c) = xv(r, c) * inv[r] * gv[c];
  }
  const int ix = x.id, ig = gain.id;
  return x.tape->record(std::move(out), {x, gain}, [ix, ig, m, n, inv = std::move(inv)](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    const auto& xv = t.value(ix);
    const auto& gv = t.value(ig);
    if (t.requires_grad(ix)) {
      auto& gx = t.grad_mut(ix);
      for (int r = 0; r < m; ++r) {
        T dot = 0;
        for (int c = 0; c < n; ++c) dot += g(r, c) * gv[c] * xv(r, c);
        const T coef = inv[r] * inv[r] * inv[r] * dot / n;
        for (int c = 0; c < n; ++c) gx(r, c) += g(r, c) * gv[c] * inv[r] - xv(r, c) * coef;
      }
    }
    if (t.requires_grad(ig)) {
      auto& gg = t.grad_mut(ig);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) gg[c] += g(r, c) * xv(r, c) * inv[r];
    }
  });
}

template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  const auto& tv = table.value();
  const int vocab = tv.rows(), d = tv.cols();
  BasicTensor<T> out({static_cast<int>(ids.size()), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= vocab) {
      throw VocabularyError("embedding: id " + std::to_string(ids[r]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.row(ids[r]).data(), d, out.row(static_cast<int>(r)).data());
  }
  const int it = table.id;
  return table.tape->record(std::move(out), {table}, [it, ids, d](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    auto& gt = t.grad_mut(it);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (int c = 0; c < d; ++c) gt(ids[r], c) += g(static_cast<int>(r), c);
  });
}

// Rotary embedding on adjacent pairs inside each head.
template <typename T>
Var<T> rotary(Var<T> x, const std::vector<int>& positions, int n_heads, double base = 10000.0) {
  const auto& xv = x.value();
  const int m = xv.rows(), width = xv.cols();
  if (static_cast<int>(positions.size()) != m) {
    throw DimensionError("rotary: " + std::to_string(positions.size()) + " positions for " + std::to_string(m) + " rows");
  }
  const int hd = width / n_heads;
  const int half = hd / 2;
  std::vector<T> cosv(static_cast<std::size_t>(m) * half), sinv(static_cast<std::size_t>(m) * half);
  for (int r = 0; r < m; ++r) {
    for (int i = 0; i < half; ++i) {
      const double theta = positions[r] * std::pow(base, -2.0 * i / hd);
      cosv[static_cast<std::size_t>(r) * half + i] = static_cast<T>(std::cos(theta));
      sinv[static_cast<std::size_t>(r) * half + i] = static_cast<T>(std::sin(theta));
    }
  }
  BasicTensor<T> out(xv.shape());
  for (int r = 0; r < m; ++r) {
    for (int h = 0; h < n_heads; ++h) {
      for (int i = 0; i < half; ++i) {
        const int c0 = h * hd + 2 * i;
        const T cs = cosv[static_cast<std::size_t>(r) * half + i], sn = sinv[static_cast<std::size_t>(r) * half + i];
        out(r, c0) = xv(r, c0) * cs - xv(r, c0 + 1) * sn;
        out(r, c0 + 1) = xv(r, c0) * sn + xv(r, c0 + 1) * cs;
      }
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, m, n_heads, hd, half, cosv = std::move(cosv), sinv = std::move(sinv)](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    auto& gx = t.grad_mut(ix);
    for (int r = 0; r < m; ++r) {
      for (int h = 0; h < n_heads; ++h) {
        for (int i = 0; i < half; ++i) {
          const int c0 = h * hd + 2 * i;
          const T cs = cosv[static_cast<std::size_t>(r) * half + i], sn = sinv[static_cast<std::size_t>(r) * half + i];
          gx(r, c0) += g(r, c0) * cs + g(r, c0 + 1) * sn;
          gx(r, c0 + 1) += -g(r, c0) * sn + g(r, c0 + 1) * cs;
        }
      }
    }
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const BoolMatrix& mask, int n_heads) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  if (qv.cols() != kv.cols() || kv.shape() != vv.shape() || qv.cols() % n_heads != 0) {
    throw DimensionError("attention: q " + to_string(qv.shape()) + ", k " + to_string(kv.shape()) + ", v " +
                         to_string(vv.shape()));
  }
  if (mask.rows() != qv.rows() || mask.cols() != kv.rows()) {
    throw ContractError("attention: mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                        " but q_len=" + std::to_string(qv.rows()) + ", kv_len=" + std::to_string(kv.rows()));
  }
  for (int r = 0; r < mask.rows(); ++r) {
    bool any = false;
    for (auto c : mask.row(r)) any = any || c;
    if (!any) throw ContractError("attention: query row " + std::to_string(r) + " attends no key");
  }
  kernels::AttentionDims dims{qv.rows(), kv.rows(), n_heads, qv.cols() / n_heads};
  const T sc = T{1} / std::sqrt(static_cast<T>(dims.head_dim));
  BasicTensor<T> out(qv.shape());
  std::vector<T> probs(static_cast<std::size_t>(n_heads) * dims.q_len * dims.kv_len);
  kernels::attention_forward<T>(qv.values(), kv.values(), vv.values(), mask, dims, sc, out.values(), probs);
  const int iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(std::move(out), {q, k, v},
                        [iq, ik, iv, mask, dims, sc, probs = std::move(probs)](Tape<T>& t, int self) {
                          const auto& g = t.grad_mut(self);
                          BasicTensor<T> dq(t.value(iq).shape()), dk(t.value(ik).shape()), dv(t.value(iv).shape());
                          kernels::attention_backward<T>(t.value(iq).values(), t.value(ik).values(),
                                                         t.value(iv).values(), probs, g.values(), mask, dims, sc,
                                                         dq.values(), dk.values(), dv.values());
                          const std::pair<int, const BasicTensor<T>*> parts[] = {{iq, &dq}, {ik, &dk}, {iv, &dv}};
                          for (auto [id, d] : parts) {
                            if (!t.requires_grad(id)) continue;
                            auto& gi = t.grad_mut(id);
                            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += (*d)[i];
                          }
                        });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const int cols = parts.front().cols();
  int rows = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(p, parts.front());
    if (p.value().rank() != 2 || p.cols() != cols) {
      throw DimensionError("concat_rows: " + to_string(p.shape()) + " vs width " + std::to_string(cols));
    }
    rows += p.rows();
  }
  BasicTensor<T> out({rows, cols});
  std::vector<int> offsets;
  std::vector<int> ids;
  int at = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + static_cast<std::size_t>(at) * cols);
    offsets.push_back(at);
    ids.push_back(p.id);
    at += p.rows();
  }
  return parts.front().tape->record(std::move(out), parts, [offsets, ids, cols](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      auto& gi = t.grad_mut(ids[i]);
      const T* src = g.data() + static_cast<std::size_t>(offsets[i]) * cols;
      for (std::size_t e = 0; e < gi.numel(); ++e) gi[e] += src[e];
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<int>& rows) {
  const auto& xv = x.value();
  const int cols = xv.cols();
  BasicTensor<T> out({static_cast<int>(rows.size()), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= xv.rows()) throw ContractError("gather_rows: row index out of range");
    std::copy_n(xv.row(rows[r]).data(), cols, out.row(static_cast<int>(r)).data());
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, rows, cols](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    auto& gx = t.grad_mut(ix);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c = 0; c < cols; ++c) gx(rows[r], c) += g(static_cast<int>(r), c);
  });
}

template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const int n = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < n; ++c) mx = std::max(mx, x(r, c));
    T s = 0;
    for (int c = 0; c < n; ++c) s += std::exp(x(r, c) - mx);
    const T lse = mx + std::log(s);
    for (int c = 0; c < n; ++c) out(r, c) = x(r, c) - lse;
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const int n = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < n; ++c) mx = std::max(mx, x(r, c));
    T s = 0;
    for (int c = 0; c < n; ++c) {
      out(r, c) = std::exp(x(r, c) - mx);
      s += out(r, c);
    }
    for (int c = 0; c < n; ++c) out(r, c) /= s;
  }
  return out;
}

template <typename T>
Var<T> softmax(Var<T> x) {
  BasicTensor<T> out = softmax_rows(x.value());
  const int ix = x.id;
  return x.tape->record(out, {x}, [ix](Tape<T>& t, int self) {
    const auto& g = t.grad_mut(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_mut(ix);
    for (int r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (int c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (int c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

// Mean next-token cross-entropy over rows.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets) {
  const auto& lv = logits.value();
  if (static_cast<int>(targets.size()) != lv.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + to_string(lv.shape()));
  }
  const auto logp = log_softmax_rows(lv);
  T loss = 0;
  for (int r = 0; r < lv.rows(); ++r) {
    if (targets[r] < 0 || targets[r] >= lv.cols()) throw VocabularyError("cross_entropy: target out of range");
    loss -= logp(r, targets[r]);
  }
  const int m = lv.rows();
  loss /= static_cast<T>(m);
  const int il = logits.id;
  return logits.tape->record(BasicTensor<T>::scalar(loss), {logits}, [il, targets, logp, m](Tape<T>& t, int self) {
    const T g = t.grad_mut(self)[0] / static_cast<T>(m);
    auto& gl = t.grad_mut(il);
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < logp.cols(); ++c) gl(r, c) += g * std::exp(logp(r, c));
      gl(r, targets[r]) -= g;
    }
  });
}

// Σ_rows KL(softmax(logits_r) ‖ max(target_r, eps)). Targets are constants.
template <typename T>
Var<T> kl_to_target(Var<T> logits, const BasicTensor<T>& target_probs, T eps) {
  detail::require_shape(logits.shape(), target_probs.shape(), "kl_to_target");
  const auto logp = log_softmax_rows(logits.value());
  const int m = logp.rows(), n = logp.cols();
  BasicTensor<T> a(logp.shape());
  std::vector<T> row_kl(m, T{0});
  T total = 0;
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) {
      a(r, c) = logp(r, c) - std::log(std::max(target_probs(r, c), eps));
      const T p = std::exp(logp(r, c));
      if (p != T{0}) row_kl[r] += p * a(r, c);
    }
    total += row_kl[r];
  }
  const int il = logits.id;
  return logits.tape->record(BasicTensor<T>::scalar(total), {logits},
                             [il, logp, a, row_kl, m, n](Tape<T>& t, int self) {
                               const T g = t.grad_mut(self)[0];
                               auto& gl = t.grad_mut(il);
                               for (int r = 0; r < m; ++r)
                                 for (int c = 0; c < n; ++c) gl(r, c) += g * std::exp(logp(r, c)) * (a(r, c) - row_kl[r]);
                             });
}

}  // namespace firp::ad
