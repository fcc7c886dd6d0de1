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

// Forward and backward compute kernels for the layer set the backbone needs.
// Kernels are direct loops over [N,C,H,W] row-major data; shapes here are
// small enough that clarity wins over blocked/fast-path implementations.
// Every kernel validates shapes up front and checks outputs for NaN/Inf.

#include <algorithm>
#include <cmath>
#include <vector>

#include "adakws/tensor.hpp"

namespace adakws::kernels {

struct Conv2dSpec {
  int64_t stride_h = 1;
  int64_t stride_w = 1;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
  int64_t groups = 1;
};

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename S>
std::vector<int64_t> conv2d_out_shape(const TensorT<S>& input, const TensorT<S>& weight,
                                      const Conv2dSpec& spec) {
  if (input.rank() != 4) {
    fail_invalid("conv2d: input must be rank 4 [N,C,H,W], got ", shape_str(input.shape()));
  }
  if (weight.rank() != 4) {
    fail_invalid("conv2d: weight must be rank 4 [Cout,Cin/groups,kh,kw], got ",
                 shape_str(weight.shape()));
  }
  const int64_t cin = input.dim(1), cout = weight.dim(0);
  if (spec.groups < 1 || cin % spec.groups != 0) {
    fail_invalid("conv2d: input channels ", cin, " (axis 1) not divisible by groups ",
                 spec.groups);
  }
  if (cout % spec.groups != 0) {
    fail_invalid("conv2d: output channels ", cout, " (weight axis 0) not divisible by groups ",
                 spec.groups);
  }
  if (weight.dim(1) != cin / spec.groups) {
    fail_invalid("conv2d: weight axis 1 is ", weight.dim(1), " but input channels/groups = ",
                 cin / spec.groups);
  }
  const int64_t ho = conv_out_dim(input.dim(2), weight.dim(2), spec.stride_h, spec.pad_h);
  const int64_t wo = conv_out_dim(input.dim(3), weight.dim(3), spec.stride_w, spec.pad_w);
  if (ho < 1 || wo < 1) {
    fail_invalid("conv2d: kernel ", weight.dim(2), "x", weight.dim(3), " with stride ",
                 spec.stride_h, "x", spec.stride_w, ", pad ", spec.pad_h, "x", spec.pad_w,
                 " does not fit input ", shape_str(input.shape()),
                 " (axes 2,3 produce empty output)");
  }
  return {input.dim(0), cout, ho, wo};
}

namespace detail {

// Valid output range [lo, hi) such that in = out*stride + k - pad stays
// inside [0, in_dim) for all out in the range.
inline void valid_out_range(int64_t out_dim, int64_t in_dim, int64_t k, int64_t stride,
                            int64_t pad, int64_t* lo, int64_t* hi) {
  const int64_t offset = k - pad;  // in = out*stride + offset
  int64_t start = 0;
  if (offset < 0) start = (-offset + stride - 1) / stride;
  const int64_t numer = in_dim - 1 - offset;
  const int64_t end = numer < 0 ? 0 : numer / stride + 1;
  *lo = std::min(start, out_dim);
  *hi = std::min(end, out_dim);
  if (*hi < *lo) *hi = *lo;
}

}  // namespace detail

/// Direct cross-correlation. groups=Cin gives depthwise convolution.
template <typename S>
TensorT<S> conv2d_forward(const TensorT<S>& input, const TensorT<S>& weight,
                          const Conv2dSpec& spec) {
  const auto out_shape = conv2d_out_shape(input, weight, spec);
  TensorT<S> out(out_shape, S(0));
  const int64_t n_batch = input.dim(0), cin = input.dim(1), h_in = input.dim(2),
                w_in = input.dim(3);
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int64_t h_out = out_shape[2], w_out = out_shape[3];
  const int64_t cpg_in = cin / spec.groups, cpg_out = cout / spec.groups;

  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t co = 0; co < cout; ++co) {
      const int64_t g = co / cpg_out;
      for (int64_t ci = 0; ci < cpg_in; ++ci) {
        const int64_t c_in = g * cpg_in + ci;
        for (int64_t r = 0; r < kh; ++r) {
          int64_t ho_lo, ho_hi;
          detail::valid_out_range(h_out, h_in, r, spec.stride_h, spec.pad_h, &ho_lo, &ho_hi);
          for (int64_t s = 0; s < kw; ++s) {
            const S wv = weight.at(co, ci, r, s);
            if (wv == S(0)) continue;
            int64_t wo_lo, wo_hi;
            detail::valid_out_range(w_out, w_in, s, spec.stride_w, spec.pad_w, &wo_lo, &wo_hi);
            for (int64_t ho = ho_lo; ho < ho_hi; ++ho) {
              const int64_t hi_in = ho * spec.stride_h + r - spec.pad_h;
              const S* in_row = input.data() +
                  ((n * cin + c_in) * h_in + hi_in) * w_in + (wo_lo * spec.stride_w + s - spec.pad_w);
              S* out_row = out.data() + ((n * cout + co) * h_out + ho) * w_out + wo_lo;
              if (spec.stride_w == 1) {
                for (int64_t wo = wo_lo; wo < wo_hi; ++wo) {
                  *out_row++ += wv * *in_row++;
                }
              } else {
                for (int64_t wo = wo_lo; wo < wo_hi; ++wo) {
                  *out_row++ += wv * *in_row;
                  in_row += spec.stride_w;
                }
              }
            }
          }
        }
      }
    }
  }
  ensure_finite(out, "conv2d");
  return out;
}

template <typename S>
struct Conv2dGrads {
  TensorT<S> d_input;
  TensorT<S> d_weight;
};

template <typename S>
Conv2dGrads<S> conv2d_backward(const TensorT<S>& input, const TensorT<S>& weight,
                               const Conv2dSpec& spec, const TensorT<S>& d_out,
                               bool want_d_input, bool want_d_weight) {
  Conv2dGrads<S> grads;
  if (want_d_input) grads.d_input = TensorT<S>(input.shape(), S(0));
  if (want_d_weight) grads.d_weight = TensorT<S>(weight.shape(), S(0));
  const int64_t n_batch = input.dim(0), cin = input.dim(1), h_in = input.dim(2),
                w_in = input.dim(3);
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int64_t h_out = d_out.dim(2), w_out = d_out.dim(3);
  const int64_t cpg_in = cin / spec.groups, cpg_out = cout / spec.groups;

  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t co = 0; co < cout; ++co) {
      const int64_t g = co / cpg_out;
      for (int64_t ci = 0; ci < cpg_in; ++ci) {
        const int64_t c_in = g * cpg_in + ci;
        for (int64_t r = 0; r < kh; ++r) {
          int64_t ho_lo, ho_hi;
          detail::valid_out_range(h_out, h_in, r, spec.stride_h, spec.pad_h, &ho_lo, &ho_hi);
          for (int64_t s = 0; s < kw; ++s) {
            int64_t wo_lo, wo_hi;
            detail::valid_out_range(w_out, w_in, s, spec.stride_w, spec.pad_w, &wo_lo, &wo_hi);
            const S wv = weight.at(co, ci, r, s);
            S dw_acc = S(0);
            for (int64_t ho = ho_lo; ho < ho_hi; ++ho) {
              const int64_t hi_in = ho * spec.stride_h + r - spec.pad_h;
              const int64_t in_base =
                  ((n * cin + c_in) * h_in + hi_in) * w_in + s - spec.pad_w;
              const S* dout_row = d_out.data() + ((n * cout + co) * h_out + ho) * w_out + wo_lo;
              const S* in_row = input.data() + in_base + wo_lo * spec.stride_w;
              if (want_d_input) {
                S* din_row = grads.d_input.data() + in_base + wo_lo * spec.stride_w;
                for (int64_t wo = wo_lo; wo < wo_hi; ++wo) {
                  const S go = dout_row[wo - wo_lo];
                  *din_row += wv * go;
                  if (want_d_weight) dw_acc += go * *in_row;
                  din_row += spec.stride_w;
                  in_row += spec.stride_w;
                }
              } else if (want_d_weight) {
                for (int64_t wo = wo_lo; wo < wo_hi; ++wo) {
                  dw_acc += dout_row[wo - wo_lo] * *in_row;
                  in_row += spec.stride_w;
                }
              }
            }
            if (want_d_weight) grads.d_weight.at(co, ci, r, s) += dw_acc;
          }
        }
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel mean and biased variance over N*H*W. Double accumulators keep
/// the reduction stable in 32-bit mode.
template <typename S>
void bn_batch_stats(const TensorT<S>& input, TensorT<S>* mean, TensorT<S>* var) {
  const int64_t n_batch = input.dim(0), c_dim = input.dim(1),
                plane = input.dim(2) * input.dim(3);
  const int64_t m = n_batch * plane;
  if (m < 1) fail_invalid("batchnorm: needs at least one element per channel");
  *mean = TensorT<S>({c_dim});
  *var = TensorT<S>({c_dim});
  for (int64_t c = 0; c < c_dim; ++c) {
    double sum = 0.0, sumsq = 0.0;
    for (int64_t n = 0; n < n_batch; ++n) {
      const S* p = input.data() + (n * c_dim + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double v = static_cast<double>(p[i]);
        sum += v;
        sumsq += v * v;
      }
    }
    const double mu = sum / static_cast<double>(m);
    double v = sumsq / static_cast<double>(m) - mu * mu;
    if (v < 0.0) v = 0.0;  // guard tiny negative from cancellation
    (*mean)[c] = static_cast<S>(mu);
    (*var)[c] = static_cast<S>(v);
  }
}

template <typename S>
TensorT<S> bn_apply(const TensorT<S>& input, const TensorT<S>& gamma, const TensorT<S>& beta,
                    const TensorT<S>& mean, const TensorT<S>& invstd) {
  const int64_t n_batch = input.dim(0), c_dim = input.dim(1),
                plane = input.dim(2) * input.dim(3);
  TensorT<S> out(input.shape());
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t c = 0; c < c_dim; ++c) {
      const S scale = gamma[c] * invstd[c];
      const S shift = beta[c] - mean[c] * scale;
      const S* p = input.data() + (n * c_dim + c) * plane;
      S* q = out.data() + (n * c_dim + c) * plane;
      for (int64_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
    }
  }
  ensure_finite(out, "batchnorm");
  return out;
}

template <typename S>
void bn_check_affine(const TensorT<S>& input, const TensorT<S>& gamma, const TensorT<S>& beta) {
  if (input.rank() != 4) {
    fail_invalid("batchnorm: input must be rank 4 [N,C,H,W], got ", shape_str(input.shape()));
  }
  if (gamma.rank() != 1 || gamma.dim(0) != input.dim(1) || beta.rank() != 1 ||
      beta.dim(0) != input.dim(1)) {
    fail_invalid("batchnorm: gamma/beta must have shape [C=", input.dim(1), "], got gamma ",
                 shape_str(gamma.shape()), ", beta ", shape_str(beta.shape()));
  }
}

template <typename S>
TensorT<S> bn_invstd(const TensorT<S>& var, S eps) {
  TensorT<S> invstd(var.shape());
  for (int64_t c = 0; c < var.numel(); ++c) {
    invstd[c] = S(1) / std::sqrt(var[c] + eps);
  }
  return invstd;
}

/// Normalize with the batch's own statistics; mean/invstd are returned so the
/// backward pass can reuse them. Running statistics are never touched here.
template <typename S>
TensorT<S> bn_forward_batch(const TensorT<S>& input, const TensorT<S>& gamma,
                            const TensorT<S>& beta, S eps, TensorT<S>* mean_out,
                            TensorT<S>* invstd_out) {
  bn_check_affine(input, gamma, beta);
  TensorT<S> var;
  bn_batch_stats(input, mean_out, &var);
  *invstd_out = bn_invstd(var, eps);
  return bn_apply(input, gamma, beta, *mean_out, *invstd_out);
}

/// Normalize with stored statistics (frozen inference).
template <typename S>
TensorT<S> bn_forward_running(const TensorT<S>& input, const TensorT<S>& gamma,
                              const TensorT<S>& beta, const TensorT<S>& running_mean,
                              const TensorT<S>& running_var, S eps) {
  bn_check_affine(input, gamma, beta);
  return bn_apply(input, gamma, beta, running_mean, bn_invstd(running_var, eps));
}

template <typename S>
struct BnGrads {
  TensorT<S> d_input;
  TensorT<S> d_gamma;
  TensorT<S> d_beta;
};

/// Backward through batch-statistic normalization (stats are functions of the
/// input, so the reduction couples every element in a channel).
template <typename S>
BnGrads<S> bn_backward_batch(const TensorT<S>& input, const TensorT<S>& gamma,
                             const TensorT<S>& mean, const TensorT<S>& invstd,
                             const TensorT<S>& d_out, bool want_d_input) {
  const int64_t n_batch = input.dim(0), c_dim = input.dim(1),
                plane = input.dim(2) * input.dim(3);
  const double m = static_cast<double>(n_batch * plane);
  BnGrads<S> g;
  g.d_gamma = TensorT<S>({c_dim});
  g.d_beta = TensorT<S>({c_dim});
  if (want_d_input) g.d_input = TensorT<S>(input.shape());
  for (int64_t c = 0; c < c_dim; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t n = 0; n < n_batch; ++n) {
      const S* x = input.data() + (n * c_dim + c) * plane;
      const S* dy = d_out.data() + (n * c_dim + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mean[c]) * invstd[c];
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xhat;
      }
    }
    g.d_gamma[c] = static_cast<S>(sum_dy_xhat);
    g.d_beta[c] = static_cast<S>(sum_dy);
    if (want_d_input) {
      const double mean_dy = sum_dy / m;
      const double mean_dy_xhat = sum_dy_xhat / m;
      const double scale = static_cast<double>(gamma[c]) * invstd[c];
      for (int64_t n = 0; n < n_batch; ++n) {
        const S* x = input.data() + (n * c_dim + c) * plane;
        const S* dy = d_out.data() + (n * c_dim + c) * plane;
        S* dx = g.d_input.data() + (n * c_dim + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double xhat = (static_cast<double>(x[i]) - mean[c]) * invstd[c];
          dx[i] = static_cast<S>(scale * (dy[i] - mean_dy - xhat * mean_dy_xhat));
        }
      }
    }
  }
  return g;
}

/// Backward when normalization used stored statistics (stats are constants).
template <typename S>
BnGrads<S> bn_backward_running(const TensorT<S>& input, const TensorT<S>& gamma,
                               const TensorT<S>& mean, const TensorT<S>& invstd,
                               const TensorT<S>& d_out, bool want_d_input) {
  const int64_t n_batch = input.dim(0), c_dim = input.dim(1),
                plane = input.dim(2) * input.dim(3);
  BnGrads<S> g;
  g.d_gamma = TensorT<S>({c_dim});
  g.d_beta = TensorT<S>({c_dim});
  if (want_d_input) g.d_input = TensorT<S>(input.shape());
  for (int64_t c = 0; c < c_dim; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    const S scale = gamma[c] * invstd[c];
    for (int64_t n = 0; n < n_batch; ++n) {
      const S* x = input.data() + (n * c_dim + c) * plane;
      const S* dy = d_out.data() + (n * c_dim + c) * plane;
      S* dx = want_d_input ? g.d_input.data() + (n * c_dim + c) * plane : nullptr;
      for (int64_t i = 0; i < plane; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mean[c]) * invstd[c];
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xhat;
        if (dx) dx[i] = dy[i] * scale;
      }
    }
    g.d_gamma[c] = static_cast<S>(sum_dy_xhat);
    g.d_beta[c] = static_cast<S>(sum_dy);
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU / global average pool / linear
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> relu_forward(const TensorT<S>& input) {
  TensorT<S> out(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) out[i] = input[i] > S(0) ? input[i] : S(0);
  return out;
}

template <typename S>
TensorT<S> relu_backward(const TensorT<S>& input, const TensorT<S>& d_out) {
  TensorT<S> d_in(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) d_in[i] = input[i] > S(0) ? d_out[i] : S(0);
  return d_in;
}

template <typename S>
TensorT<S> global_avg_pool_forward(const TensorT<S>& input) {
  if (input.rank() != 4) {
    fail_invalid("global_avg_pool: input must be rank 4, got ", shape_str(input.shape()));
  }
  const int64_t n_batch = input.dim(0), c_dim = input.dim(1),
                plane = input.dim(2) * input.dim(3);
  TensorT<S> out({n_batch, c_dim});
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t c = 0; c < c_dim; ++c) {
      double sum = 0.0;
      const S* p = input.data() + (n * c_dim + c) * plane;
      for (int64_t i = 0; i < plane; ++i) sum += p[i];
      out.at(n, c) = static_cast<S>(sum / static_cast<double>(plane));
    }
  }
  ensure_finite(out, "global_avg_pool");
  return out;
}

template <typename S>
TensorT<S> global_avg_pool_backward(const TensorT<S>& d_out, const std::vector<int64_t>& in_shape) {
  TensorT<S> d_in(in_shape);
  const int64_t n_batch = in_shape[0], c_dim = in_shape[1], plane = in_shape[2] * in_shape[3];
  const S inv = S(1) / static_cast<S>(plane);
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t c = 0; c < c_dim; ++c) {
      const S v = d_out.at(n, c) * inv;
      S* p = d_in.data() + (n * c_dim + c) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] = v;
    }
  }
  return d_in;
}

/// y = x W^T + b with W stored [out_features, in_features].
template <typename S>
TensorT<S> linear_forward(const TensorT<S>& input, const TensorT<S>& weight,
                          const TensorT<S>& bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    fail_invalid("linear: input and weight must be rank 2, got ", shape_str(input.shape()),
                 " and ", shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    fail_invalid("linear: input features ", input.dim(1), " (axis 1) != weight inner dim ",
                 weight.dim(1));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    fail_invalid("linear: bias must have shape [", weight.dim(0), "], got ",
                 shape_str(bias.shape()));
  }
  const int64_t n_batch = input.dim(0), in_f = input.dim(1), out_f = weight.dim(0);
  TensorT<S> out({n_batch, out_f});
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t j = 0; j < out_f; ++j) {
      double acc = bias[j];
      const S* x = input.data() + n * in_f;
      const S* w = weight.data() + j * in_f;
      for (int64_t k = 0; k < in_f; ++k) acc += static_cast<double>(x[k]) * w[k];
      out.at(n, j) = static_cast<S>(acc);
    }
  }
  ensure_finite(out, "linear");
  return out;
}

template <typename S>
struct LinearGrads {
  TensorT<S> d_input;
  TensorT<S> d_weight;
  TensorT<S> d_bias;
};

template <typename S>
LinearGrads<S> linear_backward(const TensorT<S>& input, const TensorT<S>& weight,
                               const TensorT<S>& d_out, bool want_d_input, bool want_d_weight) {
  const int64_t n_batch = input.dim(0), in_f = input.dim(1), out_f = weight.dim(0);
  LinearGrads<S> g;
  if (want_d_input) g.d_input = TensorT<S>(input.shape(), S(0));
  if (want_d_weight) {
    g.d_weight = TensorT<S>(weight.shape(), S(0));
    g.d_bias = TensorT<S>({out_f}, S(0));
  }
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t j = 0; j < out_f; ++j) {
      const S go = d_out.at(n, j);
      const S* x = input.data() + n * in_f;
      const S* w = weight.data() + j * in_f;
      if (want_d_input) {
        S* dx = g.d_input.data() + n * in_f;
        for (int64_t k = 0; k < in_f; ++k) dx[k] += go * w[k];
      }
      if (want_d_weight) {
        S* dw = g.d_weight.data() + j * in_f;
        for (int64_t k = 0; k < in_f; ++k) dw[k] += go * x[k];
        g.d_bias[j] += go;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax entropy / cross entropy
// ---------------------------------------------------------------------------

template <typename S>
struct SoftmaxEntropy {
  TensorT<S> probs;     // [N,C]
  TensorT<S> logprobs;  // [N,C], saved for the backward pass
  TensorT<S> entropy;   // [N], natural log
};

/// Row-wise stable softmax plus Shannon entropy H_i = -sum_c p_ic ln p_ic.
template <typename S>
SoftmaxEntropy<S> softmax_entropy_forward(const TensorT<S>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    fail_invalid("softmax_entropy: logits must be [N,C] with C >= 2, got ",
                 shape_str(logits.shape()));
  }
  const int64_t n_rows = logits.dim(0), c_dim = logits.dim(1);
  SoftmaxEntropy<S> r{TensorT<S>(logits.shape()), TensorT<S>(logits.shape()),
                      TensorT<S>({n_rows})};
  for (int64_t n = 0; n < n_rows; ++n) {
    const S* z = logits.data() + n * c_dim;
    S zmax = z[0];
    for (int64_t c = 1; c < c_dim; ++c) zmax = std::max(zmax, z[c]);
    double sum = 0.0;
    for (int64_t c = 0; c < c_dim; ++c) sum += std::exp(static_cast<double>(z[c] - zmax));
    const double lse = static_cast<double>(zmax) + std::log(sum);
    double h = 0.0;
    for (int64_t c = 0; c < c_dim; ++c) {
      const double logp = static_cast<double>(z[c]) - lse;
      const double p = std::exp(logp);
      r.logprobs.at(n, c) = static_cast<S>(logp);
      r.probs.at(n, c) = static_cast<S>(p);
      if (p > 0.0) h -= p * logp;
    }
    r.entropy[n] = static_cast<S>(h);
  }
  ensure_finite(r.probs, "softmax_entropy");
  ensure_finite(r.entropy, "softmax_entropy");
  return r;
}

/// dH/dz_k = -p_k (ln p_k + H); rows scale by the incoming entropy gradient.
template <typename S>
TensorT<S> softmax_entropy_backward(const SoftmaxEntropy<S>& fwd, const TensorT<S>& d_entropy) {
  const int64_t n_rows = fwd.probs.dim(0), c_dim = fwd.probs.dim(1);
  TensorT<S> d_logits(fwd.probs.shape());
  for (int64_t n = 0; n < n_rows; ++n) {
    const S gh = d_entropy[n];
    const S h = fwd.entropy[n];
    for (int64_t c = 0; c < c_dim; ++c) {
      const S p = fwd.probs.at(n, c);
      d_logits.at(n, c) = p > S(0) ? gh * (-p * (fwd.logprobs.at(n, c) + h)) : S(0);
    }
  }
  return d_logits;
}

template <typename S>
struct CrossEntropy {
  TensorT<S> probs;
  TensorT<S> logprobs;
  S loss;  // mean over rows
};

/// Label-smoothed cross entropy: targets q = (1-eps)*onehot + eps/C.
template <typename S>
CrossEntropy<S> cross_entropy_smooth_forward(const TensorT<S>& logits,
                                             const std::vector<int>& labels, S smoothing) {
  const int64_t n_rows = logits.dim(0), c_dim = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n_rows) {
    fail_invalid("cross_entropy: ", labels.size(), " labels for ", n_rows, " rows");
  }
  auto se = softmax_entropy_forward(logits);
  double total = 0.0;
  const double uniform = static_cast<double>(smoothing) / static_cast<double>(c_dim);
  for (int64_t n = 0; n < n_rows; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    if (y < 0 || y >= c_dim) fail_invalid("cross_entropy: label ", y, " out of range [0,", c_dim, ")");
    double row = 0.0;
    for (int64_t c = 0; c < c_dim; ++c) {
      const double q = uniform + (c == y ? 1.0 - static_cast<double>(smoothing) : 0.0);
      row -= q * static_cast<double>(se.logprobs.at(n, c));
    }
    total += row;
  }
  return {std::move(se.probs), std::move(se.logprobs),
          static_cast<S>(total / static_cast<double>(n_rows))};
}

template <typename S>
TensorT<S> cross_entropy_smooth_backward(const CrossEntropy<S>& fwd,
                                         const std::vector<int>& labels, S smoothing,
                                         S d_loss) {
  const int64_t n_rows = fwd.probs.dim(0), c_dim = fwd.probs.dim(1);
  TensorT<S> d_logits(fwd.probs.shape());
  const S scale = d_loss / static_cast<S>(n_rows);
  const S uniform = smoothing / static_cast<S>(c_dim);
  for (int64_t n = 0; n < n_rows; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    for (int64_t c = 0; c < c_dim; ++c) {
      const S q = uniform + (c == y ? S(1) - smoothing : S(0));
      d_logits.at(n, c) = scale * (fwd.probs.at(n, c) - q);
    }
  }
  return d_logits;
}

/// Row-wise argmax; ties break toward the lowest class index.
template <typename S>
std::vector<int> argmax_rows(const TensorT<S>& t) {
  const int64_t n_rows = t.dim(0), c_dim = t.dim(1);
  std::vector<int> out(static_cast<size_t>(n_rows));
  for (int64_t n = 0; n < n_rows; ++n) {
    int best = 0;
    S best_v = t.at(n, 0);
    for (int64_t c = 1; c < c_dim; ++c) {
      if (t.at(n, c) > best_v) {
        best_v = t.at(n, c);
        best = static_cast<int>(c);
      }
    }
    out[static_cast<size_t>(n)] = best;
  }
  return out;
}

}  // namespace adakws::kernels
