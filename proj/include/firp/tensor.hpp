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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "firp/errors.hpp"

namespace firp {

using Shape = std::vector<int>;

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

// Dense row-major tensor. Rank 1 and 2 are the only ranks the library uses;
// a rank-1 tensor of length n is treated as one row of n columns.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(firp::numel(shape_), fill) {
    check_dims();
  }

  BasicTensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    check_dims();
    if (data_.size() != firp::numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor({1}, std::vector<T>{value}); }

  static BasicTensor identity(int n) {
    BasicTensor out({n, n});
    for (int i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  int rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  int cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::span<T> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())}; }
  std::span<const T> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())};
  }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  T operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  template <typename U>
  BasicTensor<U> cast() const {
    if (data_.empty()) return BasicTensor<U>();
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    out.set_requires_grad(requires_grad_);
    return out;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Appends the rows of a matrix with the same column count.
  void append_rows(const BasicTensor& other) {
    if (shape_.size() != 2 || other.rank() != 2 || other.cols() != cols()) {
      throw DimensionError("append_rows: " + to_string(other.shape_) + " onto " + to_string(shape_));
    }
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    shape_[0] += other.rows();
  }

  // Keeps the listed rows in the listed order.
  void keep_rows(const std::vector<int>& rows) {
    const int c = cols();
    std::vector<T> kept;
    kept.reserve(rows.size() * static_cast<std::size_t>(c));
    for (int r : rows) {
      if (r < 0 || r >= this->rows()) throw ContractError("keep_rows: row " + std::to_string(r) + " out of range");
      kept.insert(kept.end(), data_.begin() + static_cast<std::ptrdiff_t>(r) * c,
                  data_.begin() + static_cast<std::ptrdiff_t>(r + 1) * c);
    }
    data_ = std::move(kept);
    shape_[0] = static_cast<int>(rows.size());
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!(v == v) || v - v != T{0}) return false;
    }
    return true;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (int d : shape_) {
      if (d < 0) throw DimensionError("negative dimension in shape " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Boolean matrix; true means the row may attend the column.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(int rows, int cols, bool fill = false)
      : rows_(rows), cols_(cols), cells_(static_cast<std::size_t>(rows) * cols, fill ? 1 : 0) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }

  bool operator()(int r, int c) const { return cells_[static_cast<std::size_t>(r) * cols_ + c] != 0; }
  void set(int r, int c, bool v = true) { cells_[static_cast<std::size_t>(r) * cols_ + c] = v ? 1 : 0; }

  std::span<const std::uint8_t> row(int r) const {
    return {cells_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
  }

  // Keeps rows [0, rows) and the given column ranges, concatenated in order.
  BoolMatrix block(int rows, const std::vector<std::pair<int, int>>& col_ranges) const {
    int cols = 0;
    for (auto [b, e] : col_ranges) cols += e - b;
    BoolMatrix out(rows, cols);
    for (int r = 0; r < rows; ++r) {
      int c_out = 0;
      for (auto [b, e] : col_ranges) {
        for (int c = b; c < e; ++c) out.set(r, c_out++, (*this)(r, c));
      }
    }
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : cells_) n += v;
    return n;
  }

  friend bool operator==(const BoolMatrix& a, const BoolMatrix& b) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

}  // namespace firp
