/* Copyright 2026 The adakws Authors. All Rights Reserved.

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
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "adakws/common.hpp"

namespace adakws {

/// Dense N-dimensional array, flat row-major storage.
///
/// Production code instantiates S = float; S = double exists for the
/// gradient-verification tests.
template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape, S fill = S(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  TensorT(std::vector<int64_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_)) {
      fail_invalid("tensor data size ", data_.size(), " does not match shape ",
                   shape_str(shape_));
    }
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& flat() { return data_; }
  const std::vector<S>& flat() const { return data_; }

  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed access for the ranks the kernels use.
  S& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  S at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  S& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  S at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  /// Bitwise equality (shape and the exact bit pattern of every element).
  bool bitwise_equal(const TensorT& other) const {
    if (shape_ != other.shape_) return false;
    return data_.empty() ||
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(S)) == 0;
  }

  bool all_finite() const {
    for (S v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename T>
  TensorT<T> cast() const {
    std::vector<T> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return TensorT<T>(shape_, std::move(out));
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) fail_invalid("negative dimension in shape ", shape_str(shape));
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<S> data_;
};

using Tensor = TensorT<float>;

/// Hard error on any non-finite value; `what` names the producing kernel.
template <typename S>
void ensure_finite(const TensorT<S>& t, const char* what) {
  if (!t.all_finite()) {
    fail_runtime("non-finite value produced by ", what);
  }
}

}  // namespace adakws
