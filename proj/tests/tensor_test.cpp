/* Copyright 2026 The tlnp Authors. All Rights Reserved.

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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "tlnp/ops.hpp"

namespace tlnp {
namespace {

using testing::dot;
using testing::finite_difference_check;
using testing::naive_conv2d;
using testing::probe_loss;
using testing::random_int_tensor;
using testing::random_tensor;

constexpr DType kF64 = DType::kF64;

TEST(TensorTest, RejectsNonPositiveDimensions) {
  EXPECT_THROW(Tensor({1, 0, 2, 2}, DType::kF32), ShapeError);
}

TEST(TensorTest, HandleCopiesShareCloneDoesNot) {
  Tensor a = Tensor::full({1, 1, 2, 2}, 3.0);
  Tensor b = a.clone();
  Tensor c = a;
  a.set(0, 7.0);
  EXPECT_EQ(b.at(0), 3.0);
  EXPECT_EQ(c.at(0), 7.0);
}

TEST(Conv2dTest, PointwiseScaling) {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 1, 1}, 2.0);
  Tensor y = conv2d(x, w, std::nullopt, ConvParams::same(1, 1, 1));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.to_vector()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2dTest, PaddedThreeByThreeSumsWindow) {
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4}, kF64);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, kF64);
  const ConvParams p = ConvParams::same(1, 1, 3);
  Tensor y = conv2d(x, w, std::nullopt, p);
  Tensor ref = naive_conv2d(x, w, nullptr, p);
  // Every 3x3 window around a 2x2 input covers all four pixels.
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(y.at(i), 10.0);
    EXPECT_EQ(ref.at(i), 10.0);
  }
}

TEST(Conv2dTest, DepthwiseIdentityKernel) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = Tensor::zeros({2, 1, 3, 3}, kF64);
  w.set(4, 1.0);
  w.set(9 + 4, 1.0);
  Tensor y = conv2d(x, w, std::nullopt, ConvParams::same(2, 2, 3, 1, 1, 2));
  EXPECT_TRUE(y.same_bits(x));
}

TEST(Conv2dTest, MatchesNaiveLoopExactlyOnIntegerData) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(1, 9), ch(1, 4), k(1, 3), s(1, 2), d(1, 3);
  for (int trial = 0; trial < 40; ++trial) {
    ConvParams p;
    p.in_channels = ch(rng);
    p.out_channels = ch(rng);
    p.kernel = {k(rng), k(rng)};
    p.stride = {s(rng), s(rng)};
    p.dilation = {1, 1};
    p.padding = {p.kernel[0] / 2, p.kernel[1] / 2};
    const Shape xs{std::uniform_int_distribution<int>(1, 2)(rng), p.in_channels,
                   dim(rng) + 2, dim(rng) + 2};
    if (p.out_size(xs.h, 0) < 1 || p.out_size(xs.w, 1) < 1) continue;
    Tensor x = random_int_tensor(xs, rng);
    Tensor w = random_int_tensor(p.weight_shape(), rng);
    Tensor y = conv2d(x, w, std::nullopt, p);
    Tensor ref = naive_conv2d(x, w, nullptr, p);
    ASSERT_EQ(y.to_vector(), ref.to_vector()) << "trial " << trial;
  }
}

TEST(Conv2dTest, DilatedGroupedBiasedMatchesNaiveLoop) {
  std::mt19937_64 rng(3);
  for (int groups : {1, 2, 4}) {
    for (int dil : {1, 2, 3}) {
      ConvParams p = ConvParams::same(4, 8, 3, 1, dil, groups, true);
      Tensor x = random_tensor({2, 4, 9, 9}, rng);
      Tensor w = random_tensor(p.weight_shape(), rng);
      Tensor b = random_tensor({1, 8, 1, 1}, rng);
      const auto bv = b.to_vector();
      Tensor y = conv2d(x, w, b, p);
      Tensor ref = naive_conv2d(x, w, &bv, p);
      auto yv = y.to_vector(), rv = ref.to_vector();
      for (std::size_t i = 0; i < yv.size(); ++i) ASSERT_NEAR(yv[i], rv[i], 1e-12);
    }
  }
}

TEST(Conv2dTest, StridedDepthwiseMatchesNaiveLoop) {
  std::mt19937_64 rng(4);
  ConvParams p = ConvParams::same(3, 3, 3, 2, 2, 3);
  Tensor x = random_tensor({1, 3, 8, 10}, rng);
  Tensor w = random_tensor(p.weight_shape(), rng);
  auto yv = conv2d(x, w, std::nullopt, p).to_vector();
  auto rv = naive_conv2d(x, w, nullptr, p).to_vector();
  ASSERT_EQ(yv.size(), rv.size());
  for (std::size_t i = 0; i < yv.size(); ++i) EXPECT_NEAR(yv[i], rv[i], 1e-12);
}

TEST(Conv2dTest, ShapeMismatchNamesDimension) {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  Tensor w = Tensor::zeros({2, 4, 3, 3});
  try {
    conv2d(x, w, std::nullopt, ConvParams::same(4, 2, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input channels 3"), std::string::npos);
  }
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4, 4}), w, std::nullopt,
                      ConvParams::same(4, 3, 3)),
               ShapeError);
}

TEST(Conv2dTest, RejectsEmptyOutput) {
  ConvParams p;
  p.in_channels = 1;
  p.out_channels = 1;
  p.kernel = {5, 5};
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 5, 5}),
                      std::nullopt, p),
               ShapeError);
}

TEST(ConvTransposeTest, SinglePixelBroadcast) {
  ConvTransposeParams p{1, 1};
  Tensor x = Tensor::full({1, 1, 1, 1}, 1.5);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = conv_transpose2d(x, w, std::nullopt, p);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.to_vector()) EXPECT_EQ(v, 1.5);
}

TEST(ConvTransposeTest, DoublesSpatialSize) {
  for (auto [h, w] : {std::pair{3, 5}, std::pair{1, 1}, std::pair{12, 20}}) {
    ConvTransposeParams p{2, 3};
    Tensor y = conv_transpose2d(Tensor::zeros({1, 2, h, w}), Tensor::zeros({2, 3, 2, 2}),
                                std::nullopt, p);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 2 * h, 2 * w}));
  }
}

TEST(ConvTransposeTest, IsAdjointOfConv) {
  std::mt19937_64 rng(5);
  // conv2d: (1,3,8,8) -> (1,2,4,4) with k2 s2; its adjoint maps back.
  ConvParams cp;
  cp.in_channels = 3;
  cp.out_channels = 2;
  cp.kernel = {2, 2};
  cp.stride = {2, 2};
  ConvTransposeParams tp{2, 3};
  Tensor w = random_tensor({2, 3, 2, 2}, rng);  // conv [out=2,in=3] == convT [in=2,out=3]
  Tensor x = random_tensor({1, 3, 8, 8}, rng);
  Tensor y = random_tensor({1, 2, 4, 4}, rng);
  const double lhs = dot(conv2d(x, w, std::nullopt, cp), y);
  const double rhs = dot(x, conv_transpose2d(y, w, std::nullopt, tp));
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(ConvTransposeTest, RejectsNonPositiveOutput) {
  ConvTransposeParams p{1, 1};
  p.padding = {2, 2};
  EXPECT_THROW(conv_transpose2d(Tensor::zeros({1, 1, 1, 1}), Tensor::zeros({1, 1, 2, 2}),
                                std::nullopt, p),
               ShapeError);
}

// <L(x), y> == <x, L^T(y)> where L^T(y) is obtained through backward().
void expect_adjoint(const std::function<Tensor(const Tensor&)>& op, Shape in_shape,
                    std::mt19937_64& rng, int line) {
  SCOPED_TRACE(line);
  Tensor x = random_tensor(in_shape, rng);
  Tensor lx = op(x);
  Tensor y = random_tensor(lx.shape(), rng);
  Tensor probe = random_tensor(in_shape, rng).set_requires_grad(true);
  backward(sum(mul(op(probe), y)));
  Tensor lty = Tensor::from_vector(in_shape, probe.grad_vector(), kF64);
  EXPECT_NEAR(dot(lx, y), dot(x, lty), 1e-10);
}

TEST(AdjointTest, LinearOps) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const ConvParams p = ConvParams::same(4, 6, 3, 1 + trial % 2, 1 + trial % 3, 2);
    Tensor w = random_tensor(p.weight_shape(), rng);
    expect_adjoint([&](const Tensor& x) { return conv2d(x, w, std::nullopt, p); },
                   {2, 4, 7 + trial, 6}, rng, __LINE__);
  }
  const ConvParams dw = ConvParams::same(3, 3, 3, 1, 4, 3);
  Tensor wd = random_tensor(dw.weight_shape(), rng);
  expect_adjoint([&](const Tensor& x) { return conv2d(x, wd, std::nullopt, dw); },
                 {1, 3, 9, 9}, rng, __LINE__);
  ConvTransposeParams tp{3, 2};
  Tensor wt = random_tensor(tp.weight_shape(), rng);
  expect_adjoint([&](const Tensor& x) { return conv_transpose2d(x, wt, std::nullopt, tp); },
                 {2, 3, 4, 5}, rng, __LINE__);
  expect_adjoint([](const Tensor& x) { return avg_pool2(x); }, {2, 3, 6, 8}, rng, __LINE__);
  expect_adjoint([](const Tensor& x) { return concat_channels({scale(x, 2.0), x}); },
                 {2, 3, 4, 4}, rng, __LINE__);
  expect_adjoint([](const Tensor& x) { return sum_per_channel(x); }, {2, 3, 4, 4}, rng, __LINE__);
  Tensor attn = random_tensor({1, 2, 4, 6}, rng);
  expect_adjoint([&](const Tensor& x) { return patch_centers(attn, x, 2, 3); },
                 {1, 5, 4, 6}, rng, __LINE__);
  Tensor centers = random_tensor({1, 4, 2, 5}, rng);
  expect_adjoint([&](const Tensor& x) { return patch_similarity(x, centers, 2, 3, 0.7); },
                 {1, 5, 4, 6}, rng, __LINE__);
  expect_adjoint([&](const Tensor& x) { return patch_aggregate(x, centers, 2, 3); },
                 {1, 2, 4, 6}, rng, __LINE__);
}

TEST(BatchNormTest, AlreadyNormalizedInputPassesThrough) {
  // Per channel: values {-1, 1} have mean 0 and variance 1.
  Tensor x = Tensor::from_vector({2, 2, 1, 2}, {-1, 1, 1, -1, 1, -1, -1, 1}, kF64);
  Tensor g = Tensor::full({1, 2, 1, 1}, 1.0, kF64), b = Tensor::zeros({1, 2, 1, 1}, kF64);
  Tensor rm = Tensor::zeros({1, 2, 1, 1}, kF64), rv = Tensor::full({1, 2, 1, 1}, 1.0, kF64);
  Tensor y = batch_norm(x, g, b, rm, rv, true, 0.1, 1e-5);
  auto xv = x.to_vector(), yv = y.to_vector();
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_LT(std::abs(xv[i] - yv[i]), 1e-5);
}

TEST(BatchNormTest, ConstantChannelGivesBeta) {
  Tensor x = Tensor::full({2, 2, 3, 3}, 4.0, kF64);
  Tensor g = Tensor::full({1, 2, 1, 1}, 1.5, kF64);
  Tensor b = Tensor::from_vector({1, 2, 1, 1}, {0.25, -2}, kF64);
  Tensor rm = Tensor::zeros({1, 2, 1, 1}, kF64), rv = Tensor::full({1, 2, 1, 1}, 1.0, kF64);
  Tensor y = batch_norm(x, g, b, rm, rv, true, 0.1, 1e-5);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const double expect = (i / 9) % 2 == 0 ? 0.25 : -2.0;
    EXPECT_NEAR(y.at(i), expect, 1e-12);
  }
}

TEST(BatchNormTest, TrainingOutputHasUnitMoments) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({3, 4, 5, 6}, rng, -3, 5);
  Tensor g = Tensor::full({1, 4, 1, 1}, 1.0, kF64), b = Tensor::zeros({1, 4, 1, 1}, kF64);
  Tensor rm = Tensor::zeros({1, 4, 1, 1}, kF64), rv = Tensor::full({1, 4, 1, 1}, 1.0, kF64);
  Tensor y = batch_norm(x, g, b, rm, rv, true, 0.1, 1e-5);
  for (int c = 0; c < 4; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 3; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 6; ++w) m += y.at(n, c, h, w);
    m /= 90;
    for (int n = 0; n < 3; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 6; ++w) v += std::pow(y.at(n, c, h, w) - m, 2);
    v /= 90;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_GE(v, 1 - 1e-3);
    EXPECT_LE(v, 1 + 1e-3);
  }
}

TEST(BatchNormTest, RunningStatsFollowMomentumAndEvalUsesThem) {
  Tensor x = Tensor::from_vector({1, 1, 1, 4}, {1, 2, 3, 6}, kF64);
  Tensor g = Tensor::full({1, 1, 1, 1}, 1.0, kF64), b = Tensor::zeros({1, 1, 1, 1}, kF64);
  Tensor rm = Tensor::zeros({1, 1, 1, 1}, kF64), rv = Tensor::full({1, 1, 1, 1}, 1.0, kF64);
  batch_norm(x, g, b, rm, rv, true, 0.5, 1e-5);
  EXPECT_DOUBLE_EQ(rm.at(0), 0.5 * 3.0);
  // unbiased variance of {1,2,3,6} = 14/3
  EXPECT_DOUBLE_EQ(rv.at(0), 0.5 + 0.5 * 14.0 / 3.0);
  Tensor y = batch_norm(x, g, b, rm, rv, false, 0.5, 1e-5);
  EXPECT_NEAR(y.at(0), (1 - 1.5) / std::sqrt(rv.at(0) + 1e-5), 1e-12);
  EXPECT_DOUBLE_EQ(rm.at(0), 1.5);  // eval mode leaves the stats alone
}

TEST(BatchNormTest, RejectsChannelMismatch) {
  Tensor x = Tensor::zeros({1, 3, 2, 2});
  Tensor v = Tensor::zeros({1, 2, 1, 1});
  EXPECT_THROW(batch_norm(x, v, v, v, v, true, 0.1, 1e-5), ShapeError);
}

TEST(PreluTest, Definition) {
  Tensor x = Tensor::from_vector({1, 1, 1, 3}, {-1, 0, 2}, kF64);
  Tensor a = Tensor::full({1, 1, 1, 1}, 0.25, kF64);
  auto y = prelu(x, a).to_vector();
  EXPECT_EQ(y, (std::vector<double>{-0.25, 0, 2}));
  Tensor one = Tensor::full({1, 1, 1, 1}, 1.0, kF64);
  EXPECT_TRUE(prelu(x, one).same_bits(x));
}

TEST(PreluTest, SlopeGradientAtNegativeInput) {
  Tensor x = Tensor::full({1, 1, 1, 1}, -3.0, kF64);
  Tensor a = Tensor::full({1, 1, 1, 1}, 0.25, kF64).set_requires_grad(true);
  backward(sum(prelu(x, a)));
  EXPECT_DOUBLE_EQ(a.grad_at(0), -3.0);
  std::mt19937_64 rng(8);
  auto r = finite_difference_check([&] { return sum(prelu(x, a)); }, {a}, 1, rng);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(AvgPoolTest, MeanOfWindow) {
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4}, kF64);
  EXPECT_EQ(avg_pool2(x).item(), 2.5);
  Tensor c = Tensor::full({1, 3, 4, 6}, 0.75, kF64);
  Tensor y = avg_pool2(c);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 2, 3}));
  for (double v : y.to_vector()) EXPECT_EQ(v, 0.75);
}

TEST(AvgPoolTest, MatchesLoopOracle) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({1, 3, 8, 8}, rng);
  Tensor y = avg_pool2(x);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double ref = (x.at(0, c, 2 * i, 2 * j) + x.at(0, c, 2 * i, 2 * j + 1) +
                            x.at(0, c, 2 * i + 1, 2 * j) + x.at(0, c, 2 * i + 1, 2 * j + 1)) *
                           0.25;
        EXPECT_EQ(y.at(0, c, i, j), ref);
      }
}

TEST(AvgPoolTest, RejectsOddSize) {
  EXPECT_THROW(avg_pool2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
  EXPECT_THROW(avg_pool2(Tensor::zeros({1, 1, 4, 5})), ShapeError);
}

TEST(ConcatTest, OrderAndShape) {
  Tensor a = Tensor::full({1, 2, 4, 4}, 1.0), b = Tensor::full({1, 3, 4, 4}, 2.0);
  Tensor y = concat_channels({a, b});
  EXPECT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(y.at(0, 1, 3, 3), 1.0);
  EXPECT_EQ(y.at(0, 2, 0, 0), 2.0);
  EXPECT_THROW(concat_channels({a, Tensor::zeros({1, 1, 4, 3})}), ShapeError);
}

TEST(SoftmaxTest, ZeroLogitsGiveHalf) {
  Tensor y = softmax_channel(Tensor::zeros({1, 2, 3, 3}, kF64));
  for (double v : y.to_vector()) EXPECT_EQ(v, 0.5);
}

TEST(SoftmaxTest, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({2, 5, 3, 4}, rng, -20, 20);
  Tensor y = softmax_channel(x);
  Tensor y2 = softmax_channel(add_scalar(x, 13.25));
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) {
        double s = 0;
        for (int c = 0; c < 5; ++c) {
          s += y.at(n, c, h, w);
          EXPECT_NEAR(y.at(n, c, h, w), y2.at(n, c, h, w), 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
}

TEST(BackwardTest, AddPassesUpstreamGradient) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({1, 2, 2, 2}, rng).set_requires_grad(true);
  Tensor b = random_tensor({1, 2, 2, 2}, rng).set_requires_grad(true);
  Tensor probe = random_tensor({1, 2, 2, 2}, rng);
  backward(probe_loss(add(a, b), probe));
  EXPECT_EQ(a.grad_vector(), probe.to_vector());
  EXPECT_EQ(b.grad_vector(), probe.to_vector());
}

TEST(BackwardTest, SumGivesOnes) {
  Tensor x = Tensor::zeros({2, 3, 2, 2}, kF64).set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad_vector()) EXPECT_EQ(g, 1.0);
}

TEST(BackwardTest, RepeatedCallsAccumulateUntilZeroed) {
  Tensor x = Tensor::full({1, 1, 1, 3}, 2.0, kF64).set_requires_grad(true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  for (double g : x.grad_vector()) EXPECT_EQ(g, 8.0);
  x.zero_grad();
  backward(loss);
  for (double g : x.grad_vector()) EXPECT_EQ(g, 4.0);
}

TEST(BackwardTest, RejectsNonScalar) {
  Tensor x = Tensor::zeros({1, 1, 2, 2}).set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(BackwardTest, NoGradGuardSkipsTape) {
  Tensor x = Tensor::zeros({1, 1, 2, 2}).set_requires_grad(true);
  NoGradGuard guard;
  EXPECT_FALSE(scale(x, 2.0).requires_grad());
}

TEST(GradientTest, SquaredConvWeightsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  const ConvParams p = ConvParams::same(3, 4, 3);
  Tensor x = random_tensor({2, 3, 6, 6}, rng);
  Tensor w = random_tensor(p.weight_shape(), rng, -0.3, 0.3).set_requires_grad(true);
  auto loss = [&] {
    Tensor y = conv2d(x, w, std::nullopt, p);
    return sum(mul(y, y));
  };
  auto r = finite_difference_check(loss, {w}, static_cast<int>(w.numel()), rng);
  EXPECT_EQ(r.checked, w.numel());
  EXPECT_LT(r.max_rel_error, 1e-4);
}

struct OpCase {
  const char* name;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  std::vector<Shape> shapes;
  double lo = -1, hi = 1;
};

TEST(GradientTest, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  Tensor rm = Tensor::zeros({1, 3, 1, 1}, kF64), rv = Tensor::full({1, 3, 1, 1}, 1.0, kF64);
  const std::vector<OpCase> cases = {
      {"conv2d_bias_dilated_grouped",
       [](const auto& t) { return conv2d(t[0], t[1], t[2], ConvParams::same(4, 6, 3, 1, 2, 2, true)); },
       {{2, 4, 7, 7}, {6, 2, 3, 3}, {1, 6, 1, 1}}},
      {"conv2d_strided",
       [](const auto& t) { return conv2d(t[0], t[1], std::nullopt, ConvParams::same(3, 2, 3, 2)); },
       {{1, 3, 8, 6}, {2, 3, 3, 3}}},
      {"conv2d_depthwise",
       [](const auto& t) { return conv2d(t[0], t[1], std::nullopt, ConvParams::same(3, 3, 3, 1, 2, 3)); },
       {{2, 3, 6, 6}, {3, 1, 3, 3}}},
      {"conv2d_pointwise_bias",
       [](const auto& t) { return conv2d(t[0], t[1], t[2], ConvParams::same(3, 5, 1, 1, 1, 1, true)); },
       {{2, 3, 4, 4}, {5, 3, 1, 1}, {1, 5, 1, 1}}},
      {"conv_transpose2d",
       [](const auto& t) {
         ConvTransposeParams p{3, 2};
         p.has_bias = true;
         return conv_transpose2d(t[0], t[1], t[2], p);
       },
       {{2, 3, 3, 4}, {3, 2, 2, 2}, {1, 2, 1, 1}}},
      {"batch_norm_train",
       [&](const auto& t) { return batch_norm(t[0], t[1], t[2], rm, rv, true, 0.1, 1e-5); },
       {{2, 3, 3, 3}, {1, 3, 1, 1}, {1, 3, 1, 1}}},
      {"batch_norm_eval",
       [&](const auto& t) { return batch_norm(t[0], t[1], t[2], rm, rv, false, 0.1, 1e-5); },
       {{2, 3, 3, 3}, {1, 3, 1, 1}, {1, 3, 1, 1}}},
      {"prelu", [](const auto& t) { return prelu(t[0], t[1]); }, {{2, 3, 4, 4}, {1, 3, 1, 1}}},
      {"avg_pool2", [](const auto& t) { return avg_pool2(t[0]); }, {{2, 2, 4, 6}}},
      {"concat", [](const auto& t) { return concat_channels({t[0], t[1]}); },
       {{2, 2, 3, 3}, {2, 1, 3, 3}}},
      {"softmax_channel", [](const auto& t) { return softmax_channel(t[0]); }, {{2, 4, 3, 3}}},
      {"mul", [](const auto& t) { return mul(t[0], t[1]); }, {{1, 2, 3, 3}, {1, 2, 3, 3}}},
      {"div", [](const auto& t) { return div(t[0], t[1]); }, {{1, 2, 3, 3}, {1, 2, 3, 3}}, 0.5, 2},
      {"log", [](const auto& t) { return log(t[0]); }, {{1, 2, 3, 3}}, 0.2, 2},
      {"pow", [](const auto& t) { return pow(t[0], 2.5); }, {{1, 2, 3, 3}}, 0.2, 2},
      {"sub_scale", [](const auto& t) { return scale(sub(t[0], t[1]), -1.5); },
       {{1, 2, 3, 3}, {1, 2, 3, 3}}},
      {"sum_per_channel", [](const auto& t) { return sum_per_channel(t[0]); }, {{2, 3, 3, 3}}},
      {"patch_softmax", [](const auto& t) { return patch_softmax(t[0], 2, 3); }, {{2, 3, 4, 6}}},
      {"patch_centers", [](const auto& t) { return patch_centers(t[0], t[1], 2, 2); },
       {{1, 3, 4, 4}, {1, 5, 4, 4}}},
      {"patch_similarity",
       [](const auto& t) { return patch_similarity(t[0], t[1], 2, 2, 0.5); },
       {{1, 5, 4, 4}, {1, 4, 3, 5}}},
      {"patch_aggregate", [](const auto& t) { return patch_aggregate(t[0], t[1], 2, 2); },
       {{1, 3, 4, 4}, {1, 4, 3, 5}}},
  };
  for (const auto& c : cases) {
    std::vector<Tensor> inputs;
    for (const auto& s : c.shapes) {
      inputs.push_back(random_tensor(s, rng, c.lo, c.hi).set_requires_grad(true));
    }
    Tensor probe = random_tensor(c.fn(inputs).shape(), rng);
    auto loss = [&] { return probe_loss(c.fn(inputs), probe); };
    auto r = finite_difference_check(loss, inputs, 20, rng);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name;
  }
}

TEST(GradientTest, ClampBlocksGradientOutsideRange) {
  Tensor x = Tensor::from_vector({1, 1, 1, 3}, {-2, 0.5, 3}, kF64).set_requires_grad(true);
  backward(sum(clamp(x, 0, 1)));
  EXPECT_EQ(x.grad_vector(), (std::vector<double>{0, 1, 0}));
}

TEST(PrecisionTest, MixedDtypesRejected) {
  EXPECT_THROW(add(Tensor::zeros({1, 1, 1, 1}, DType::kF32), Tensor::zeros({1, 1, 1, 1}, kF64)),
               ShapeError);
  Tensor f = Tensor::full({1, 1, 2, 2}, 0.5, DType::kF32);
  EXPECT_EQ(f.to(kF64).dtype(), kF64);
  EXPECT_EQ(f.to(kF64).at(3), 0.5);
}

}  // namespace
}  // namespace tlnp
