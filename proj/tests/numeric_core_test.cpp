#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ddpmfus;
using ddpmfus::testing::gradient_error;
using ddpmfus::testing::random_tensor;
using TD = Tensor<double>;
using Inputs = std::vector<TD>;

namespace {

constexpr double kPrimitiveTol = 1e-4;

AttentionWeights<double> random_attention(std::size_t c, std::mt19937_64& rng, bool grad) {
  return {random_tensor({c, c}, rng, -0.5, 0.5, grad), random_tensor({c}, rng, -0.1, 0.1, grad),
          random_tensor({c, c}, rng, -0.5, 0.5, grad), random_tensor({c}, rng, -0.1, 0.1, grad),
          random_tensor({c, c}, rng, -0.5, 0.5, grad), random_tensor({c}, rng, -0.1, 0.1, grad),
          random_tensor({c, c}, rng, -0.5, 0.5, grad), random_tensor({c}, rng, -0.1, 0.1, grad)};
}

}  // namespace

TEST(Tensor, ShapeMismatchOnConstruction) {
  EXPECT_THROW(TD(Shape{2, 3}, std::vector<double>(5)), DimensionError);
}

TEST(Tensor, ItemRequiresScalar) {
  EXPECT_THROW(TD(Shape{2}).item(), ContractError);
  EXPECT_DOUBLE_EQ(TD::scalar(3.5).item(), 3.5);
}

TEST(Autodiff, SumGivesOnes) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 4}, rng, -1, 1, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, SquareGivesTwiceInput) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({5, 3}, rng, -1, 1, true);
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Autodiff, NonScalarLossIsContractError) {
  TD x(Shape{3}, 1.0);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Autodiff, SharedSubexpressionVisitedOnce) {
  // a feeds three consumers; a wrong traversal would double-count its gradient.
  TD x(Shape{1}, 3.0);
  x.set_requires_grad(true);
  auto a = scale(x, 2.0);
  auto loss = sum(add(add(mul(a, a), a), a));
  backward(loss);
  // d/dx (4x^2 + 4x) = 8x + 4
  EXPECT_DOUBLE_EQ(x.grad()[0], 28.0);
}

TEST(Autodiff, LeafGradientsAccumulateAcrossBackwardCalls) {
  TD x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  TD x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  NoGradGuard guard;
  auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({1, 3, 3}, rng);
  TD k(Shape{1, 1, 1, 1}, 1.0);
  auto y = conv2d(x, k);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, ConstantInputHandSums) {
  TD x(Shape{1, 5, 5}, 7.0);
  TD k(Shape{1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, k, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 5}));
  EXPECT_DOUBLE_EQ(y.at(0, 2, 2), 63.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 28.0);
  EXPECT_DOUBLE_EQ(y.at(0, 4, 4), 28.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2), 42.0);
}

TEST(Conv2d, StrideTwoShape) {
  TD x(Shape{2, 8, 8}, 1.0);
  TD k(Shape{4, 2, 3, 3}, 0.1);
  EXPECT_EQ(conv2d(x, k, 2, 1).shape(), (Shape{4, 4, 4}));
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  TD x(Shape{3, 4, 4}, 1.0);
  TD k(Shape{1, 2, 3, 3}, 1.0);
  EXPECT_THROW(conv2d(x, k, 1, 1), DimensionError);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 6, 5}, rng);
  auto k = random_tensor({2, 3, 3, 3}, rng);
  auto b = random_tensor({2}, rng);
  auto y = conv2d(x, k, b, 2, 1);
  const int H = 6, W = 5, OH = 3, OW = 3;
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3}));
  for (int o = 0; o < 2; ++o)
    for (int r = 0; r < OH; ++r)
      for (int c = 0; c < OW; ++c) {
        double acc = b[o];
        for (int i = 0; i < 3; ++i)
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              const int yy = r * 2 - 1 + u, xx = c * 2 - 1 + v;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              acc += k[((o * 3 + i) * 3 + u) * 3 + v] * x.at(i, yy, xx);
            }
        EXPECT_NEAR(y.at(o, r, c), acc, 1e-12);
      }
}

TEST(Bicubic, ConstantImageStaysConstant) {
  TD x(Shape{2, 3, 4}, 0.375);
  for (std::size_t s : {1u, 2u, 3u, 8u}) {
    auto y = bicubic_upsample(x, s);
    ASSERT_EQ(y.shape(), (Shape{2, 3 * s, 4 * s}));
    for (double v : y.data()) EXPECT_NEAR(v, 0.375, 1e-12);
  }
}

TEST(Bicubic, ScaleOneIsIdentity) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 4, 4}, rng);
  auto y = bicubic_upsample(x, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Bicubic, ReproducesLinearRampAwayFromBorders) {
  const std::size_t h = 6, w = 8, s = 2;
  TD x(Shape{1, h, w});
  auto d = x.mutable_data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) d[r * w + c] = 0.25 * static_cast<double>(c) - 0.5 * static_cast<double>(r);
  auto y = bicubic_upsample(x, s);
  // Output pixel (R, C) samples input coordinate ((R + 0.5) / s - 0.5, ...).
  for (std::size_t R = 2 * s; R < (h - 2) * s; ++R)
    for (std::size_t C = 2 * s; C < (w - 2) * s; ++C) {
      const double ir = (R + 0.5) / s - 0.5, ic = (C + 0.5) / s - 0.5;
      EXPECT_NEAR(y.at(0, R, C), 0.25 * ic - 0.5 * ir, 1e-5);
    }
}

TEST(Bicubic, ScaleBelowOneIsParameterError) {
  TD x(Shape{1, 2, 2}, 0.0);
  EXPECT_THROW(bicubic_upsample(x, 0), ParameterError);
}

TEST(GroupNorm, StandardizesEachGroup) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({4, 5, 5}, rng, -3, 7);
  TD gamma(Shape{4}, 1.0), beta(Shape{4}, 0.0);
  auto y = group_norm(x, 2, gamma, beta);
  for (std::size_t g = 0; g < 2; ++g) {
    double m = 0, v = 0;
    const std::size_t n = 2 * 25;
    for (std::size_t i = 0; i < n; ++i) m += y[g * n + i];
    m /= n;
    for (std::size_t i = 0; i < n; ++i) v += (y[g * n + i] - m) * (y[g * n + i] - m);
    v /= n;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(GroupNorm, ConstantInputGivesZero) {
  TD x(Shape{4, 3, 3}, 2.5);
  TD gamma(Shape{4}, 1.7), beta(Shape{4}, 0.0);
  const auto y = group_norm(x, 2, gamma, beta);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(GroupNorm, IndivisibleChannelsIsParameterError) {
  TD x(Shape{3, 2, 2}, 1.0);
  TD gamma(Shape{3}, 1.0), beta(Shape{3}, 0.0);
  EXPECT_THROW(group_norm(x, 2, gamma, beta), ParameterError);
}

TEST(Attention, ZeroProjectionsPassInputThrough) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({4, 3, 3}, rng);
  const std::size_t c = 4;
  AttentionWeights<double> w{TD(Shape{c, c}), TD(Shape{c}), TD(Shape{c, c}), TD(Shape{c}),
                             TD(Shape{c, c}), TD(Shape{c}), TD(Shape{c, c}), TD(Shape{c})};
  auto y = self_attention(x, w);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Attention, WeightRowsAreDistributions) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({3, 2, 4}, rng);
  auto w = random_attention(3, rng, false);
  auto a = attention_weights(x, w);
  ASSERT_EQ(a.shape(), (Shape{8, 8}));
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_GT(a[r * 8 + c], 0.0);
      s += a[r * 8 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

// Finite-difference checks of every differentiable primitive.

TEST(Gradients, Elementwise) {
  std::mt19937_64 rng(10);
  Inputs in{random_tensor({3, 4}, rng, -1, 1, true), random_tensor({3, 4}, rng, -1, 1, true)};
  EXPECT_LT(gradient_error(in, [](const Inputs& v) { return sum(mul(add(v[0], v[1]), sub(v[0], v[1]))); }), kPrimitiveTol);
  EXPECT_LT(gradient_error(in, [](const Inputs& v) { return mean(mul(silu(v[0]), scale(v[1], 1.5))); }), kPrimitiveTol);
  // Keep away from the kink at zero.
  Inputs pos{random_tensor({3, 4}, rng, 0.1, 1, true), random_tensor({3, 4}, rng, -1, -0.1, true)};
  EXPECT_LT(gradient_error(pos, [](const Inputs& v) { return sum(mul(abs(v[0]), abs(v[1]))); }), kPrimitiveTol);
}

TEST(Gradients, ShapeOps) {
  std::mt19937_64 rng(11);
  Inputs in{random_tensor({2, 3, 3}, rng, -1, 1, true), random_tensor({3, 3, 3}, rng, -1, 1, true),
            random_tensor({5}, rng, -1, 1, true)};
  auto f = [](const Inputs& v) {
    auto cat = add_channel_bias(concat_channels<double>({v[0], v[1]}), v[2]);
    auto parts = split_channels(cat, {1, 4});
    auto r = reshape(slice_channels(parts[1], 1, 2), Shape{2, 9});
    return sum(mul(r, r));
  };
  EXPECT_LT(gradient_error(in, f), kPrimitiveTol);
}

TEST(Gradients, MatmulTransposeSoftmaxDense) {
  std::mt19937_64 rng(12);
  Inputs in{random_tensor({3, 4}, rng, -1, 1, true), random_tensor({4, 5}, rng, -1, 1, true),
            random_tensor({2, 3}, rng, -1, 1, true), random_tensor({2}, rng, -1, 1, true)};
  auto weights = random_tensor({5, 3}, rng);
  auto f = [&](const Inputs& v) {
    auto s = softmax_rows(matmul(v[0], v[1]));
    auto d = dense(reshape(slice_channels(reshape(s, Shape{15, 1, 1}), 0, 3), Shape{3}), v[2], v[3]);
    return add(sum(mul(transpose(s), weights)), sum(mul(d, d)));
  };
  EXPECT_LT(gradient_error(in, f), kPrimitiveTol);
}

TEST(Gradients, Conv2d) {
  std::mt19937_64 rng(13);
  Inputs in{random_tensor({2, 5, 6}, rng, -1, 1, true), random_tensor({3, 2, 3, 3}, rng, -1, 1, true),
            random_tensor({3}, rng, -1, 1, true)};
  for (std::size_t stride : {1u, 2u}) {
    auto f = [stride](const Inputs& v) {
      auto y = conv2d(v[0], v[1], v[2], stride, 1);
      return sum(mul(y, y));
    };
    EXPECT_LT(gradient_error(in, f), kPrimitiveTol) << "stride " << stride;
  }
  Inputs one{random_tensor({3, 4, 4}, rng, -1, 1, true), random_tensor({2, 3, 1, 1}, rng, -1, 1, true)};
  EXPECT_LT(gradient_error(one, [](const Inputs& v) { auto y = conv2d(v[0], v[1]); return sum(mul(y, y)); }),
            kPrimitiveTol);
}

TEST(Gradients, GroupNorm) {
  std::mt19937_64 rng(14);
  Inputs in{random_tensor({4, 3, 3}, rng, -2, 2, true), random_tensor({4}, rng, 0.5, 1.5, true),
            random_tensor({4}, rng, -1, 1, true)};
  auto probe = random_tensor({4, 3, 3}, rng);
  auto f = [&](const Inputs& v) { return sum(mul(group_norm(v[0], 2, v[1], v[2]), probe)); };
  EXPECT_LT(gradient_error(in, f), kPrimitiveTol);
}

TEST(Gradients, UpsampleNearest) {
  std::mt19937_64 rng(15);
  Inputs in{random_tensor({2, 2, 3}, rng, -1, 1, true)};
  auto probe = random_tensor({2, 4, 6}, rng);
  EXPECT_LT(gradient_error(in, [&](const Inputs& v) { return sum(mul(upsample_nearest(v[0], 2), probe)); }),
            kPrimitiveTol);
}

TEST(Gradients, SelfAttention) {
  std::mt19937_64 rng(16);
  auto w = random_attention(3, rng, true);
  Inputs in{random_tensor({3, 2, 3}, rng, -1, 1, true), w.wq, w.bq, w.wk, w.bk, w.wv, w.bv, w.wo, w.bo};
  auto probe = random_tensor({3, 2, 3}, rng);
  auto f = [&](const Inputs& v) {
    AttentionWeights<double> a{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    return sum(mul(self_attention(v[0], a), probe));
  };
  EXPECT_LT(gradient_error(in, f), kPrimitiveTol);
}

TEST(Gradients, ComposedConvNormAttentionL1) {
  std::mt19937_64 rng(17);
  auto w = random_attention(4, rng, true);
  Inputs in{random_tensor({2, 4, 4}, rng, -1, 1, true), random_tensor({4, 2, 3, 3}, rng, -0.5, 0.5, true),
            random_tensor({4}, rng, 0.5, 1.5, true), random_tensor({4}, rng, -0.2, 0.2, true),
            w.wq, w.bq, w.wk, w.bk, w.wv, w.bv, w.wo, w.bo};
  auto target = random_tensor({4, 4, 4}, rng, -3, 3);
  auto f = [&](const Inputs& v) {
    auto h = silu(group_norm(conv2d(v[0], v[1], 1, 1), 2, v[2], v[3]));
    AttentionWeights<double> a{v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
    return mean(abs(sub(self_attention(h, a), target)));
  };
  EXPECT_LT(gradient_error(in, f), 1e-3);
}
