#include <gtest/gtest.h>

#include <cmath>

#include "glit/errors.hpp"
#include "glit/tensor.hpp"
#include "test_util.hpp"

namespace glit {
namespace {

using testing::gradient_error;
using testing::random_tensor;

constexpr double kTol = 1e-4;

TEST(TensorBasics, FactoriesAndAccessors) {
  const Tensor z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  EXPECT_EQ(z.rank(), 2u);
  EXPECT_EQ(z.at(1, 2), 0.0);
  const Tensor f = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(f.at(1, 0), 3.0);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(f.item(), ContractError);
}

TEST(TensorBasics, MatmulKnownValues) {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(c.at(0, 0), 58);
  EXPECT_DOUBLE_EQ(c.at(0, 1), 64);
  EXPECT_DOUBLE_EQ(c.at(1, 0), 139);
  EXPECT_DOUBLE_EQ(c.at(1, 1), 154);
  EXPECT_THROW(matmul(a, a), DimensionError);
}

TEST(TensorBasics, SoftmaxRowsSumToOne) {
  Rng rng(1);
  const Tensor x = random_tensor({4, 7}, rng, 10.0, false);
  const Tensor p = softmax_rows(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  // Large logits must not overflow.
  const Tensor big = softmax_rows(Tensor::from({1, 2}, {1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(big.at(0, 0), 0.5);
}

TEST(TensorBasics, LayerNormZeroMeanUnitVariance) {
  Rng rng(2);
  const Tensor x = random_tensor({3, 8}, rng, 3.0, false);
  const Tensor y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean) / 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-10);
  }
}

TEST(TensorBasics, GluHalvesAndOddWidthRejected) {
  const Tensor x = Tensor::from({1, 4}, {2.0, 3.0, 0.0, 100.0});
  const Tensor y = glu(x);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 1.0);
  EXPECT_NEAR(y.at(0, 1), 3.0, 1e-12);
  EXPECT_THROW(glu(Tensor::zeros({1, 3})), ConfigError);
}

TEST(TensorBasics, DropoutIdentityOutsideTraining) {
  Rng rng(3);
  const Tensor x = random_tensor({4, 4}, rng, 1.0, false);
  EXPECT_TRUE(dropout(x, 0.5, rng, false).same_node(x));
  EXPECT_TRUE(dropout(x, 0.0, rng, true).same_node(x));
  EXPECT_THROW(dropout(x, 1.0, rng, true), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, rng, true), ConfigError);
}

TEST(TensorBasics, DepthwiseConvImpulseResponse) {
  // A unit impulse reproduces the kernel, reversed by position.
  Tensor x = Tensor::zeros({5, 1});
  x.mutable_data()[2] = 1.0;
  const Tensor w = Tensor::from({1, 3}, {0.1, 0.2, 0.3});
  const Tensor y = conv1d_depthwise(x, w);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 0.3);
  EXPECT_DOUBLE_EQ(y.at(2, 0), 0.2);
  EXPECT_DOUBLE_EQ(y.at(3, 0), 0.1);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 0.0);
  EXPECT_THROW(conv1d_depthwise(x, Tensor::zeros({1, 4})), ConfigError);
}

TEST(TensorBasics, DepthwiseConvRespectsSequenceBoundaries) {
  Tensor x = Tensor::zeros({6, 1});
  x.mutable_data()[2] = 1.0;  // last row of the first sequence of 3
  const Tensor y = conv1d_depthwise(x, Tensor::from({1, 3}, {1, 1, 1}), 3);
  EXPECT_DOUBLE_EQ(y.at(3, 0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 1.0);
}

TEST(TensorBasics, CrossEntropySmoothing) {
  const Tensor logits = Tensor::from({1, 2}, {0.0, 0.0});
  const std::vector<int> t{0};
  EXPECT_NEAR(cross_entropy_smoothed(logits, t, 0.0).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy_smoothed(logits, t, 0.1).item(), std::log(2.0), 1e-12);
  const std::vector<int> bad{2};
  EXPECT_THROW(cross_entropy_smoothed(logits, bad, 0.1), IndexError);
}

TEST(Autodiff, BackwardOnNonScalarIsContractError) {
  Rng rng(4);
  Tensor x = random_tensor({2, 2}, rng);
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Autodiff, LeafGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 3.0)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = scale(x, 2.0);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Autodiff, ReusedNodeGetsBothContributions) {
  Tensor x = Tensor::from({1, 1}, {3.0}, true);
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

// ---- finite-difference checks, one per op ----------------------------------

class GradCheck : public ::testing::Test {
 protected:
  Rng rng{11};
};

TEST_F(GradCheck, Matmul) {
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_LT(gradient_error([&] { return matmul(a, b); }, {a, b}), kTol);
}

TEST_F(GradCheck, Transpose) {
  Tensor a = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error([&] { return transpose(a); }, {a}), kTol);
}

TEST_F(GradCheck, AddMulScale) {
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error([&] { return add(a, b); }, {a, b}), kTol);
  EXPECT_LT(gradient_error([&] { return mul(a, b); }, {a, b}), kTol);
  EXPECT_LT(gradient_error([&] { return scale(a, -1.7); }, {a}), kTol);
}

TEST_F(GradCheck, Sum) {
  Tensor a = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error([&] { return sum(a); }, {a}), kTol);
}

TEST_F(GradCheck, AddBiasAndPeriodic) {
  Tensor x = random_tensor({6, 4}, rng), b = random_tensor({4}, rng), p = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error([&] { return add_bias(x, b); }, {x, b}), kTol);
  EXPECT_LT(gradient_error([&] { return add_periodic(x, p); }, {x, p}), kTol);
}

TEST_F(GradCheck, Linear) {
  Tensor x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
  EXPECT_LT(gradient_error([&] { return linear(x, w, b); }, {x, w, b}), kTol);
  EXPECT_LT(gradient_error([&] { return linear(x, w, Tensor()); }, {x, w}), kTol);
}

TEST_F(GradCheck, SoftmaxRows) {
  Tensor x = random_tensor({3, 5}, rng, 2.0);
  EXPECT_LT(gradient_error([&] { return softmax_rows(x); }, {x}), kTol);
}

TEST_F(GradCheck, LayerNorm) {
  Tensor x = random_tensor({4, 6}, rng, 2.0), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
  EXPECT_LT(gradient_error([&] { return layer_norm(x, g, b); }, {x, g, b}), kTol);
}

TEST_F(GradCheck, Activations) {
  Tensor x = random_tensor({4, 6}, rng, 2.0);
  EXPECT_LT(gradient_error([&] { return sigmoid(x); }, {x}), kTol);
  EXPECT_LT(gradient_error([&] { return swish(x); }, {x}), kTol);
  EXPECT_LT(gradient_error([&] { return glu(x); }, {x}), kTol);
}

TEST_F(GradCheck, DropoutWithFixedMask) {
  Tensor x = random_tensor({4, 6}, rng);
  // Same seed each call so the mask is fixed across the finite differences.
  EXPECT_LT(gradient_error(
                [&] {
                  Rng mask_rng(5);
                  return dropout(x, 0.3, mask_rng, true);
                },
                {x}),
            kTol);
}

TEST_F(GradCheck, DepthwiseConv) {
  Tensor x = random_tensor({10, 3}, rng), w = random_tensor({3, 5}, rng);
  EXPECT_LT(gradient_error([&] { return conv1d_depthwise(x, w, 5); }, {x, w}), kTol);
  EXPECT_LT(gradient_error([&] { return conv1d_depthwise(x, w); }, {x, w}), kTol);
}

TEST_F(GradCheck, MultiHeadAttention) {
  Tensor q = random_tensor({8, 6}, rng), k = random_tensor({8, 6}, rng), v = random_tensor({8, 6}, rng);
  EXPECT_LT(gradient_error([&] { return multi_head_attention(q, k, v, 2, 4); }, {q, k, v}), kTol);
}

TEST_F(GradCheck, CrossEntropy) {
  Tensor logits = random_tensor({4, 5}, rng, 2.0);
  const std::vector<int> t{0, 3, 4, 1};
  EXPECT_LT(gradient_error([&] { return cross_entropy_smoothed(logits, t, 0.1); }, {logits}), kTol);
}

TEST_F(GradCheck, ShapeOps) {
  Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({2, 3}, rng);
  Tensor v = random_tensor({5}, rng), u = random_tensor({2}, rng), tok = random_tensor({3}, rng);
  EXPECT_LT(gradient_error([&] { return concat_cols({a, b}); }, {a, b}), kTol);
  EXPECT_LT(gradient_error([&] { return concat_rows({a, c}); }, {a, c}), kTol);
  EXPECT_LT(gradient_error([&] { return concat1d({v, u}); }, {v, u}), kTol);
  EXPECT_LT(gradient_error([&] { return slice(a, 1, 2, 1, 2); }, {a}), kTol);
  EXPECT_LT(gradient_error([&] { return slice1d(v, 1, 3); }, {v}), kTol);
  EXPECT_LT(gradient_error([&] { return gather_rows(a, 1, 2); }, {a}), kTol);
  EXPECT_LT(gradient_error([&] { return prepend_token(a, tok, 2); }, {a, tok}), kTol);
}

TEST(OpCounting, MatmulCountsMultiplies) {
  OpCountScope scope;
  matmul(Tensor::zeros({2, 3}), Tensor::zeros({3, 4}));
  EXPECT_EQ(scope.counts().multiplies, 24u);
}

}  // namespace
}  // namespace glit
