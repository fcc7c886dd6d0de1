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

// Gradient verification: every kernel's backward is checked against central
// finite differences, in 64-bit mode (rel err < 1e-5) and 32-bit mode
// (rel err < 1e-3), on random small shapes.

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "adakws/autograd.hpp"
#include "testutil.hpp"

namespace adakws {
namespace {

using kernels::Conv2dSpec;

template <typename S>
struct Tolerance;
template <>
struct Tolerance<double> {
  static constexpr double rel = 1e-5;
};
template <>
struct Tolerance<float> {
  static constexpr double rel = 1e-3;
};

constexpr double kFdStep = 1e-4;

// Analytic gradients come from the S-typed tape; the finite-difference
// oracle re-evaluates the same graph in double at the identical parameter
// point, so the quotient is accurate at both precisions. `build` must be a
// generic lambda usable with either tape type.
template <typename S, typename BuildFn>
void check_gradients(std::vector<TensorT<S>*> params, BuildFn build) {
  TapeT<S> tape;
  std::vector<typename TapeT<S>::NodeId> ids;
  for (size_t i = 0; i < params.size(); ++i) {
    ids.push_back(tape.leaf(*params[i], true, "p" + std::to_string(i)));
  }
  tape.backward(build(tape, ids));

  std::vector<TensorT<double>> dparams;
  dparams.reserve(params.size());
  for (auto* p : params) dparams.push_back(p->template cast<double>());
  auto eval = [&]() {
    TapeT<double> dtape;
    std::vector<TapeT<double>::NodeId> dids;
    for (size_t i = 0; i < dparams.size(); ++i) {
      dids.push_back(dtape.leaf(dparams[i], false, "p" + std::to_string(i)));
    }
    return static_cast<double>(dtape.value(build(dtape, dids))[0]);
  };

  for (size_t i = 0; i < params.size(); ++i) {
    const TensorT<S>& analytic = tape.grad(ids[i]);
    double grad_scale = 1.0;
    for (int64_t k = 0; k < analytic.numel(); ++k) {
      grad_scale = std::max(grad_scale, std::abs(static_cast<double>(analytic[k])));
    }
    // In 32-bit mode components much smaller than the gradient scale carry
    // float rounding noise; the floor keeps the relative check meaningful.
    const double floor = sizeof(S) == 4 ? 1e-2 * grad_scale : 1e-6;
    const double err =
        testutil::max_fd_rel_error<S>(dparams[i], analytic, eval, kFdStep, floor);
    EXPECT_LT(err, Tolerance<S>::rel) << "param " << i << " (" << sizeof(S) * 8 << "-bit)";
  }
}

template <typename S>
class GradCheck : public ::testing::Test {};
using Scalars = ::testing::Types<double, float>;
TYPED_TEST_SUITE(GradCheck, Scalars);

// Tape-scalar-typed copy of a double master tensor.
template <typename Tape>
TensorT<typename std::decay_t<Tape>::Scalar> as(const TensorT<double>& t) {
  return t.template cast<typename std::decay_t<Tape>::Scalar>();
}

TYPED_TEST(GradCheck, Conv2dGroupedStrided) {
  using S = TypeParam;
  Rng rng(101);
  auto x = testutil::random_tensor<S>({2, 4, 6, 5}, rng);
  auto w = testutil::random_tensor<S>({6, 2, 3, 3}, rng);
  auto dout_w = testutil::random_tensor<double>({2, 6, 3, 3}, rng);
  Conv2dSpec spec{2, 2, 1, 1, 2};
  check_gradients<S>({&x, &w}, [&](auto& tape, const auto& ids) {
    return tape.weighted_sum_all(tape.conv2d(ids[0], ids[1], spec), as<decltype(tape)>(dout_w));
  });
}

TYPED_TEST(GradCheck, DepthwiseConv) {
  using S = TypeParam;
  Rng rng(102);
  auto x = testutil::random_tensor<S>({2, 3, 5, 5}, rng);
  auto w = testutil::random_tensor<S>({3, 1, 3, 3}, rng);
  auto dw = testutil::random_tensor<double>({2, 3, 5, 5}, rng);
  Conv2dSpec spec{1, 1, 1, 1, 3};
  check_gradients<S>({&x, &w}, [&](auto& tape, const auto& ids) {
    return tape.weighted_sum_all(tape.conv2d(ids[0], ids[1], spec), as<decltype(tape)>(dw));
  });
}

TYPED_TEST(GradCheck, BatchNormBatchStats) {
  using S = TypeParam;
  Rng rng(103);
  auto x = testutil::random_tensor<S>({4, 3, 2, 3}, rng);
  auto gamma = testutil::random_tensor<S>({3}, rng, 0.5, 1.5);
  auto beta = testutil::random_tensor<S>({3}, rng, -0.5, 0.5);
  auto dw = testutil::random_tensor<double>({4, 3, 2, 3}, rng);
  check_gradients<S>({&x, &gamma, &beta}, [&](auto& tape, const auto& ids) {
    using TS = typename std::decay_t<decltype(tape)>::Scalar;
    return tape.weighted_sum_all(tape.batchnorm_batch(ids[0], ids[1], ids[2], TS(1e-5)),
                                 as<decltype(tape)>(dw));
  });
}

TYPED_TEST(GradCheck, BatchNormRunningStats) {
  using S = TypeParam;
  Rng rng(104);
  auto x = testutil::random_tensor<S>({3, 2, 2, 2}, rng);
  auto gamma = testutil::random_tensor<S>({2}, rng, 0.5, 1.5);
  auto beta = testutil::random_tensor<S>({2}, rng, -0.5, 0.5);
  auto rm = testutil::random_tensor<double>({2}, rng, -0.2, 0.2);
  auto rv = testutil::random_tensor<double>({2}, rng, 0.5, 1.5);
  auto dw = testutil::random_tensor<double>({3, 2, 2, 2}, rng);
  check_gradients<S>({&x, &gamma, &beta}, [&](auto& tape, const auto& ids) {
    using TS = typename std::decay_t<decltype(tape)>::Scalar;
    return tape.weighted_sum_all(
        tape.batchnorm_running(ids[0], ids[1], ids[2], as<decltype(tape)>(rm),
                               as<decltype(tape)>(rv), TS(1e-5)),
        as<decltype(tape)>(dw));
  });
}

TYPED_TEST(GradCheck, ReluAwayFromKink) {
  using S = TypeParam;
  Rng rng(105);
  TensorT<S> x({2, 3, 2, 2});
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double mag = rng.uniform(0.2, 1.0);
    x[i] = static_cast<S>(rng.uniform() < 0.5 ? -mag : mag);
  }
  auto dw = testutil::random_tensor<double>({2, 3, 2, 2}, rng);
  check_gradients<S>({&x}, [&](auto& tape, const auto& ids) {
    return tape.weighted_sum_all(tape.relu(ids[0]), as<decltype(tape)>(dw));
  });
}

TYPED_TEST(GradCheck, GlobalAvgPool) {
  using S = TypeParam;
  Rng rng(106);
  auto x = testutil::random_tensor<S>({2, 4, 3, 3}, rng);
  auto dw = testutil::random_tensor<double>({2, 4}, rng);
  check_gradients<S>({&x}, [&](auto& tape, const auto& ids) {
    return tape.weighted_sum_all(tape.global_avg_pool(ids[0]), as<decltype(tape)>(dw));
  });
}

TYPED_TEST(GradCheck, Linear) {
  using S = TypeParam;
  Rng rng(107);
  auto x = testutil::random_tensor<S>({3, 5}, rng);
  auto w = testutil::random_tensor<S>({4, 5}, rng);
  auto b = testutil::random_tensor<S>({4}, rng);
  auto dw = testutil::random_tensor<double>({3, 4}, rng);
  check_gradients<S>({&x, &w, &b}, [&](auto& tape, const auto& ids) {
    return tape.weighted_sum_all(tape.linear(ids[0], ids[1], ids[2]), as<decltype(tape)>(dw));
  });
}

TYPED_TEST(GradCheck, EntropyOfSoftmax) {
  using S = TypeParam;
  Rng rng(108);
  auto logits = testutil::random_tensor<S>({4, 8}, rng, -2.0, 2.0);
  std::vector<double> weights;
  for (int i = 0; i < 4; ++i) weights.push_back(rng.uniform(0.2, 1.5));
  std::vector<char> mask(4, 1);
  check_gradients<S>({&logits}, [&](auto& tape, const auto& ids) {
    using TS = typename std::decay_t<decltype(tape)>::Scalar;
    auto se = tape.softmax_entropy(ids[0]);
    return tape.masked_weighted_mean(se.entropy, std::vector<TS>(weights.begin(), weights.end()),
                                     mask);
  });
}

TYPED_TEST(GradCheck, EntropySelectedSubsetOnly) {
  using S = TypeParam;
  Rng rng(109);
  auto logits = testutil::random_tensor<S>({5, 6}, rng, -2.0, 2.0);
  std::vector<char> mask = {1, 0, 1, 0, 1};
  check_gradients<S>({&logits}, [&](auto& tape, const auto& ids) {
    using TS = typename std::decay_t<decltype(tape)>::Scalar;
    auto se = tape.softmax_entropy(ids[0]);
    return tape.masked_weighted_mean(se.entropy, std::vector<TS>(5, TS(1)), mask);
  });
}

TYPED_TEST(GradCheck, CrossEntropySmoothed) {
  using S = TypeParam;
  Rng rng(110);
  auto logits = testutil::random_tensor<S>({4, 6}, rng, -2.0, 2.0);
  std::vector<int> labels = {0, 3, 5, 2};
  check_gradients<S>({&logits}, [&](auto& tape, const auto& ids) {
    using TS = typename std::decay_t<decltype(tape)>::Scalar;
    return tape.cross_entropy_smooth(ids[0], labels, TS(0.1));
  });
}

TYPED_TEST(GradCheck, SharedWeightAccumulatesAdditively) {
  using S = TypeParam;
  Rng rng(111);
  auto x = testutil::random_tensor<S>({1, 1, 5, 5}, rng);
  auto w = testutil::random_tensor<S>({1, 1, 3, 3}, rng);
  auto dw = testutil::random_tensor<double>({1, 1, 5, 5}, rng);
  Conv2dSpec spec{1, 1, 1, 1, 1};
  check_gradients<S>({&x, &w}, [&](auto& tape, const auto& ids) {
    auto h = tape.conv2d(ids[0], ids[1], spec);
    auto h2 = tape.conv2d(h, ids[1], spec);  // same weight leaf twice
    return tape.weighted_sum_all(h2, as<decltype(tape)>(dw));
  });
}

// --- spec'd analytic cases and error contracts ------------------------------

TEST(BackwardTest, SumOfReluAnalytic) {
  Tape tape;
  auto x = tape.leaf(Tensor({2}, std::vector<float>{-1.0f, 2.0f}), true, "x");
  auto r = tape.relu(x);
  // mean over 2 elements with weight 2 == sum
  auto loss = tape.masked_weighted_mean(r, {2.0f, 2.0f}, {1, 1});
  tape.backward(loss);
  EXPECT_FLOAT_EQ(tape.grad(x)[0], 0.0f);
  EXPECT_FLOAT_EQ(tape.grad(x)[1], 1.0f);
}

TEST(BackwardTest, EntropyGradientMatchesClosedForm) {
  // dH/dz_k = -p_k (ln p_k + H)
  TapeT<double> tape;
  Rng rng(17);
  auto logits_t = testutil::random_tensor<double>({1, 5}, rng, -1.5, 1.5);
  auto logits = tape.leaf(logits_t, true, "logits");
  auto se = tape.softmax_entropy(logits);
  auto loss = tape.masked_weighted_mean(se.entropy, {1.0}, {1});
  tape.backward(loss);
  auto fwd = kernels::softmax_entropy_forward(logits_t);
  for (int64_t k = 0; k < 5; ++k) {
    const double p = fwd.probs.at(0, k);
    const double expected = -p * (std::log(p) + fwd.entropy[0]);
    EXPECT_NEAR(tape.grad(logits)[k], expected, 1e-10);
  }
}

TEST(BackwardTest, AllFrozenGraphYieldsEmptyGradientMap) {
  Tape tape;
  auto x = tape.constant(Tensor({1, 4}, 0.5f), "x");
  auto se = tape.softmax_entropy(x);
  auto loss = tape.masked_weighted_mean(se.entropy, {1.0f}, {1});
  tape.backward(loss);  // no-op: nothing requires grad
  EXPECT_TRUE(tape.trainable_gradients().empty());
}

TEST(BackwardTest, UnreachedTrainableLeafGetsZeroGradient) {
  Tape tape;
  auto used = tape.leaf(Tensor({2}, std::vector<float>{0.5f, 1.0f}), true, "used");
  auto unused = tape.leaf(Tensor({3}, 1.0f), true, "unused");
  (void)unused;
  auto loss = tape.masked_weighted_mean(tape.relu(used), {1.0f, 1.0f}, {1, 1});
  tape.backward(loss);
  auto grads = tape.trainable_gradients();
  ASSERT_EQ(grads.size(), 2u);
  for (int64_t i = 0; i < 3; ++i) EXPECT_EQ((*grads.at("unused"))[i], 0.0f);
}

TEST(BackwardTest, NonScalarLossRejected) {
  Tape tape;
  auto x = tape.leaf(Tensor({2}, 1.0f), true, "x");
  auto r = tape.relu(x);
  EXPECT_THROW(tape.backward(r), InvalidArgument);
}

TEST(BackwardTest, RepeatedBackwardRejected) {
  Tape tape;
  auto x = tape.leaf(Tensor({2}, 1.0f), true, "x");
  auto loss = tape.masked_weighted_mean(tape.relu(x), {1.0f, 1.0f}, {1, 1});
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), InvalidArgument);
}

TEST(BackwardTest, NanGradientNamesTheParameter) {
  Tape tape;
  auto x = tape.leaf(Tensor({2}, 1.0f), true, "block0.bn1.gamma");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  auto loss = tape.masked_weighted_mean(tape.relu(x), {nan, 1.0f}, {1, 1});
  try {
    tape.backward(loss);
    FAIL() << "expected NaN gradient error";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("block0.bn1.gamma"), std::string::npos) << e.what();
  }
}

TEST(BackwardTest, MaskedWeightedMeanRejectsEmptySelection) {
  Tape tape;
  auto x = tape.leaf(Tensor({2}, 1.0f), true, "x");
  auto r = tape.relu(x);
  EXPECT_THROW(tape.masked_weighted_mean(r, {1.0f, 1.0f}, {0, 0}), InvalidArgument);
}

}  // namespace
}  // namespace adakws
