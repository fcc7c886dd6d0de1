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

#include <map>
#include <string>
#include <vector>

#include "adakws/tensor.hpp"

namespace adakws {

template <typename S>
struct NamedTensorRef {
  std::string name;
  TensorT<S>* value;
};

/// Classic SGD with momentum: v = mu*v + (g + wd*theta); theta -= lr*v.
/// Velocity buffers are keyed by parameter name and created lazily.
template <typename S>
class SgdMomentumT {
 public:
  SgdMomentumT(S lr, S momentum, S weight_decay = S(0))
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(lr > S(0))) fail_invalid("learning rate must be > 0");
  }

  S lr() const { return lr_; }
  void set_lr(S lr) { lr_ = lr; }

  void step(const std::vector<NamedTensorRef<S>>& params,
            const std::map<std::string, const TensorT<S>*>& grads) {
    for (const auto& p : params) {
      auto it = grads.find(p.name);
      if (it == grads.end()) fail_invalid("no gradient for parameter '", p.name, "'");
      const TensorT<S>& g = *it->second;
      auto [vit, fresh] = velocity_.try_emplace(p.name, TensorT<S>(p.value->shape(), S(0)));
      TensorT<S>& v = vit->second;
      if (!fresh && !v.same_shape(*p.value)) {
        fail_invalid("velocity shape drift for parameter '", p.name, "'");
      }
      for (int64_t i = 0; i < p.value->numel(); ++i) {
        const S grad = g[i] + weight_decay_ * (*p.value)[i];
        v[i] = momentum_ * v[i] + grad;
        (*p.value)[i] -= lr_ * v[i];
      }
    }
  }

  /// Drops all velocity state (used when a method resets to the checkpoint).
  void reset() { velocity_.clear(); }

 private:
  S lr_;
  S momentum_;
  S weight_decay_;
  std::map<std::string, TensorT<S>> velocity_;
};

using SgdMomentum = SgdMomentumT<float>;

}  // namespace adakws
