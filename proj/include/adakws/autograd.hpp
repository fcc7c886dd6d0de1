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

// Reverse-mode tape. A tape is recorded by one forward pass, consumed by at
// most one backward pass, then discarded; adaptation does exactly one
// backward per batch so there is no persistent graph structure.

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adakws/kernels.hpp"
#include "adakws/tensor.hpp"

namespace adakws {

template <typename S>
class TapeT {
 public:
  using Scalar = S;

  struct NodeId {
    size_t idx = static_cast<size_t>(-1);
  };

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  /// Registers an input value. Trainable leaves are the only nodes reported
  /// by trainable_gradients(); leaves no op reaches keep a zero gradient.
  NodeId leaf(TensorT<S> value, bool trainable, std::string name) {
    return push(std::move(value), trainable, trainable, std::move(name));
  }

  NodeId constant(TensorT<S> value, std::string name = "const") {
    return push(std::move(value), false, false, std::move(name));
  }

  const TensorT<S>& value(NodeId id) const { return nodes_[id.idx].value; }

  const TensorT<S>& grad(NodeId id) const {
    const Node& n = nodes_[id.idx];
    if (!n.requires_grad) {
      fail_invalid("no gradient tracked for node '", n.name, "'");
    }
    return n.grad;
  }

  // ---- ops -----------------------------------------------------------------

  NodeId conv2d(NodeId input, NodeId weight, const kernels::Conv2dSpec& spec) {
    TensorT<S> out = kernels::conv2d_forward(value(input), value(weight), spec);
    NodeId id = push_op_output(std::move(out), {input, weight}, "conv2d");
    if (nodes_[id.idx].requires_grad) {
      record([this, input, weight, spec, id]() {
        const bool din = nodes_[input.idx].requires_grad;
        const bool dw = nodes_[weight.idx].requires_grad;
        auto g = kernels::conv2d_backward(nodes_[input.idx].value, nodes_[weight.idx].value,
                                          spec, nodes_[id.idx].grad, din, dw);
        if (din) accumulate(input, g.d_input);
        if (dw) accumulate(weight, g.d_weight);
      });
    }
    return id;
  }

  /// Batch-statistic normalization. Pure in the batch: stored running stats
  /// are neither read nor written. Optionally reports the batch moments so a
  /// Train-mode caller can fold them into its running statistics.
  NodeId batchnorm_batch(NodeId input, NodeId gamma, NodeId beta, S eps,
                         TensorT<S>* batch_mean = nullptr, TensorT<S>* batch_var = nullptr) {
    kernels::bn_check_affine(value(input), value(gamma), value(beta));
    TensorT<S> mean, var;
    kernels::bn_batch_stats(value(input), &mean, &var);
    TensorT<S> invstd = kernels::bn_invstd(var, eps);
    if (batch_mean) *batch_mean = mean;
    if (batch_var) *batch_var = var;
    TensorT<S> out = kernels::bn_apply(value(input), value(gamma), value(beta), mean, invstd);
    NodeId id = push_op_output(std::move(out), {input, gamma, beta}, "batchnorm");
    if (nodes_[id.idx].requires_grad) {
      record([this, input, gamma, beta, id, mean = std::move(mean),
              invstd = std::move(invstd)]() {
        const bool din = nodes_[input.idx].requires_grad;
        auto g = kernels::bn_backward_batch(nodes_[input.idx].value, nodes_[gamma.idx].value,
                                            mean, invstd, nodes_[id.idx].grad, din);
        if (din) accumulate(input, g.d_input);
        if (nodes_[gamma.idx].requires_grad) accumulate(gamma, g.d_gamma);
        if (nodes_[beta.idx].requires_grad) accumulate(beta, g.d_beta);
      });
    }
    return id;
  }

  /// Normalization with stored statistics (constants for the backward pass).
  NodeId batchnorm_running(NodeId input, NodeId gamma, NodeId beta,
                           const TensorT<S>& running_mean, const TensorT<S>& running_var,
                           S eps) {
    kernels::bn_check_affine(value(input), value(gamma), value(beta));
    TensorT<S> invstd = kernels::bn_invstd(running_var, eps);
    TensorT<S> out =
        kernels::bn_apply(value(input), value(gamma), value(beta), running_mean, invstd);
    NodeId id = push_op_output(std::move(out), {input, gamma, beta}, "batchnorm");
    if (nodes_[id.idx].requires_grad) {
      record([this, input, gamma, beta, id, mean = running_mean,
              invstd = std::move(invstd)]() {
        const bool din = nodes_[input.idx].requires_grad;
        auto g = kernels::bn_backward_running(nodes_[input.idx].value, nodes_[gamma.idx].value,
                                              mean, invstd, nodes_[id.idx].grad, din);
        if (din) accumulate(input, g.d_input);
        if (nodes_[gamma.idx].requires_grad) accumulate(gamma, g.d_gamma);
        if (nodes_[beta.idx].requires_grad) accumulate(beta, g.d_beta);
      });
    }
    return id;
  }

  NodeId relu(NodeId input) {
    NodeId id = push_op_output(kernels::relu_forward(value(input)), {input}, "relu");
    if (nodes_[id.idx].requires_grad) {
      record([this, input, id]() {
        accumulate(input, kernels::relu_backward(nodes_[input.idx].value, nodes_[id.idx].grad));
      });
    }
    return id;
  }

  NodeId global_avg_pool(NodeId input) {
    NodeId id = push_op_output(kernels::global_avg_pool_forward(value(input)), {input}, "pool");
    if (nodes_[id.idx].requires_grad) {
      auto in_shape = value(input).shape();
      record([this, input, id, in_shape]() {
        accumulate(input, kernels::global_avg_pool_backward(nodes_[id.idx].grad, in_shape));
      });
    }
    return id;
  }

  NodeId linear(NodeId input, NodeId weight, NodeId bias) {
    TensorT<S> out = kernels::linear_forward(value(input), value(weight), value(bias));
    NodeId id = push_op_output(std::move(out), {input, weight, bias}, "linear");
    if (nodes_[id.idx].requires_grad) {
      record([this, input, weight, bias, id]() {
        const bool din = nodes_[input.idx].requires_grad;
        const bool dw = nodes_[weight.idx].requires_grad;
        auto g = kernels::linear_backward(nodes_[input.idx].value, nodes_[weight.idx].value,
                                          nodes_[id.idx].grad, din, dw);
        if (din) accumulate(input, g.d_input);
        if (dw) {
          accumulate(weight, g.d_weight);
          if (nodes_[bias.idx].requires_grad) accumulate(bias, g.d_bias);
        }
      });
    }
    return id;
  }

  struct SoftmaxEntropyNodes {
    NodeId probs;    // differentiation through probs is not supported
    NodeId entropy;  // [N]
  };

  SoftmaxEntropyNodes softmax_entropy(NodeId logits) {
    auto fwd = kernels::softmax_entropy_forward(value(logits));
    NodeId probs_id = push(fwd.probs, false, false, "softmax_probs");
    TensorT<S> entropy = fwd.entropy;  // fwd stays intact for the backward closure
    NodeId ent_id = push_op_output(std::move(entropy), {logits}, "entropy");
    if (nodes_[ent_id.idx].requires_grad) {
      record([this, logits, ent_id, saved = std::move(fwd)]() {
        accumulate(logits, kernels::softmax_entropy_backward(saved, nodes_[ent_id.idx].grad));
      });
    }
    return {probs_id, ent_id};
  }

  /// Scalar loss over a per-sample vector: mean over selected i of w_i * v_i.
  /// Weights are constants under backprop. At least one index must be selected.
  NodeId masked_weighted_mean(NodeId values, const std::vector<S>& weights,
                              const std::vector<char>& mask) {
    const TensorT<S>& v = value(values);
    if (v.rank() != 1 || weights.size() != static_cast<size_t>(v.numel()) ||
        mask.size() != weights.size()) {
      fail_invalid("masked_weighted_mean: values ", shape_str(v.shape()), ", ",
                   weights.size(), " weights, ", mask.size(), " mask entries");
    }
    int64_t n_sel = 0;
    double sum = 0.0;
    for (size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) {
        sum += static_cast<double>(weights[i]) * static_cast<double>(v[static_cast<int64_t>(i)]);
        ++n_sel;
      }
    }
    if (n_sel == 0) fail_invalid("masked_weighted_mean: empty selection");
    TensorT<S> out({1});
    out[0] = static_cast<S>(sum / static_cast<double>(n_sel));
    NodeId id = push_op_output(std::move(out), {values}, "masked_weighted_mean");
    if (nodes_[id.idx].requires_grad) {
      record([this, values, id, weights, mask, n_sel]() {
        const S upstream = nodes_[id.idx].grad[0];
        TensorT<S>& dv = nodes_[values.idx].grad;
        const S inv = S(1) / static_cast<S>(n_sel);
        for (size_t i = 0; i < mask.size(); ++i) {
          if (mask[i]) dv[static_cast<int64_t>(i)] += upstream * weights[i] * inv;
        }
      });
    }
    return id;
  }

  /// Scalar sum_i w_i * v_i over all elements (any rank); weights are
  /// constants under backprop.
  NodeId weighted_sum_all(NodeId values, TensorT<S> weights) {
    const TensorT<S>& v = value(values);
    if (!weights.same_shape(v)) {
      fail_invalid("weighted_sum_all: weights ", shape_str(weights.shape()), " vs values ",
                   shape_str(v.shape()));
    }
    double sum = 0.0;
    for (int64_t i = 0; i < v.numel(); ++i) {
      sum += static_cast<double>(weights[i]) * static_cast<double>(v[i]);
    }
    TensorT<S> out({1});
    out[0] = static_cast<S>(sum);
    NodeId id = push_op_output(std::move(out), {values}, "weighted_sum_all");
    if (nodes_[id.idx].requires_grad) {
      record([this, values, id, w = std::move(weights)]() {
        const S upstream = nodes_[id.idx].grad[0];
        TensorT<S>& dv = nodes_[values.idx].grad;
        for (int64_t i = 0; i < dv.numel(); ++i) dv[i] += upstream * w[i];
      });
    }
    return id;
  }

  NodeId cross_entropy_smooth(NodeId logits, const std::vector<int>& labels, S smoothing) {
    auto fwd = kernels::cross_entropy_smooth_forward(value(logits), labels, smoothing);
    TensorT<S> out({1});
    out[0] = fwd.loss;
    NodeId id = push_op_output(std::move(out), {logits}, "cross_entropy");
    if (nodes_[id.idx].requires_grad) {
      record([this, logits, id, labels, smoothing, saved = std::move(fwd)]() {
        accumulate(logits, kernels::cross_entropy_smooth_backward(saved, labels, smoothing,
                                                                  nodes_[id.idx].grad[0]));
      });
    }
    return id;
  }

  // ---- backward --------------------------------------------------------------

  /// Reverse sweep in exact reverse recording order. One shot per tape.
  void backward(NodeId loss) {
    if (backward_done_) {
      fail_invalid("backward already run on this graph; re-record the forward pass");
    }
    backward_done_ = true;
    Node& l = nodes_[loss.idx];
    if (l.value.numel() != 1) {
      fail_invalid("backward: loss must be scalar, got shape ", shape_str(l.value.shape()));
    }
    if (l.requires_grad) {
      l.grad.fill(S(1));
      for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }
    for (const Node& n : nodes_) {
      if (n.trainable_leaf && !n.grad.all_finite()) {
        fail_runtime("NaN in gradient of parameter '", n.name, "'");
      }
    }
  }

  /// Gradients keyed by trainable leaf name (zero tensors for unreached leaves).
  std::map<std::string, const TensorT<S>*> trainable_gradients() const {
    std::map<std::string, const TensorT<S>*> out;
    for (const Node& n : nodes_) {
      if (n.trainable_leaf) out[n.name] = &n.grad;
    }
    return out;
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<S> value;
    TensorT<S> grad;
    bool requires_grad = false;
    bool trainable_leaf = false;
    std::string name;
  };

  NodeId push(TensorT<S> value, bool requires_grad, bool trainable_leaf, std::string name) {
    Node n;
    if (requires_grad) n.grad = TensorT<S>(value.shape(), S(0));
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.trainable_leaf = trainable_leaf;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  NodeId push_op_output(TensorT<S> value, std::initializer_list<NodeId> inputs,
                        std::string name) {
    bool needs_grad = false;
    for (NodeId in : inputs) needs_grad = needs_grad || nodes_[in.idx].requires_grad;
    return push(std::move(value), needs_grad, false, std::move(name));
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  void accumulate(NodeId id, const TensorT<S>& delta) {
    TensorT<S>& g = nodes_[id.idx].grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> ops_;
  bool backward_done_ = false;
};

using Tape = TapeT<float>;

}  // namespace adakws
