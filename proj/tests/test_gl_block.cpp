#include <gtest/gtest.h>

#include <cmath>

#include "glit/errors.hpp"
#include "glit/gl_block.hpp"
#include "glit/search_space.hpp"
#include "reference_vit.hpp"
#include "test_util.hpp"

namespace glit {
namespace {

using testing::random_block;
using testing::random_tensor;

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

BlockConfig config(int g, int l, int d = 12, int dk = 12, int e = 2, int k = 3, int dz = 2) {
  return BlockConfig::from_gene(BlockGene{g, l, dk, dz, e, k}, 3, d);
}

TEST(AttentionHead, SingleTokenReturnsValues) {
  Rng rng(1);
  const Tensor q = random_tensor({1, 4}, rng), k = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
  EXPECT_TRUE(testing::bit_equal(attention_head(q, k, v), v));
}

TEST(AttentionHead, ZeroQueriesAverageValues) {
  Rng rng(2);
  const Tensor k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  const Tensor out = attention_head(Tensor::zeros({5, 4}), k, v);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 5; ++r) mean += v.at(r, c) / 5;
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(out.at(r, c), mean, 1e-14);
  }
}

TEST(AttentionHead, MatchesDirectFormula) {
  Rng rng(3);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  const Tensor out = attention_head(q, k, v);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> s(5);
    double z = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 4; ++c) dot += q.at(i, c) * k.at(j, c);
      z += s[j] = std::exp(dot / 2.0);
    }
    for (std::size_t c = 0; c < 4; ++c) {
      double o = 0.0;
      for (std::size_t j = 0; j < 5; ++j) o += s[j] / z * v.at(j, c);
      EXPECT_NEAR(out.at(i, c), o, 1e-12);
    }
  }
}

TEST(AttentionHead, FusedMatchesComposed) {
  Rng rng(4);
  const Tensor q = random_tensor({6, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
  const Tensor fused = multi_head_attention(q, k, v, 2);
  const Tensor composed = concat_cols({attention_head(slice(q, 0, 6, 0, 4), slice(k, 0, 6, 0, 4), slice(v, 0, 6, 0, 4)),
                                       attention_head(slice(q, 0, 6, 4, 4), slice(k, 0, 6, 4, 4), slice(v, 0, 6, 4, 4))});
  EXPECT_LT(testing::max_abs_diff(fused, composed), 1e-13);
}

TEST(BlockConfig, HeadDimensions) {
  const BlockConfig bc = BlockConfig::from_gene(BlockGene{3, 0, 192, 4, 1, 17}, 3, 192);
  EXPECT_EQ(bc.head_dim(), 64u);
  const BlockConfig f = BlockConfig::from_gene(BlockGene{3, 0, 8, 4, 1, 17}, 1, 8);
  EXPECT_EQ(f.ffn_hidden(), 32u);
}

TEST(BlockConfig, InvalidCombinationsRejected) {
  EXPECT_THROW(config(0, 0).check(), ConfigError);
  EXPECT_THROW(config(1, 2, 12, 12, 2, 4).check(), ConfigError);
  EXPECT_THROW(config(2, 1, 12, 13).check(), ConfigError);
}

TEST(GlobalSubmodule, ZeroProjectionsGiveZero) {
  Rng rng(5);
  const BlockConfig bc = config(2, 1);
  BlockWeights w = random_block(BlockGene{2, 1, 12, 2, 2, 3}, 3, 12, rng);
  for (Tensor* t : {&w.q_w, &w.q_b, &w.k_w, &w.k_b, &w.v_w, &w.v_b})
    for (double& v : t->mutable_data()) v = 0.0;
  const Tensor out = global_submodule(random_tensor({5, 12}, rng), bc, w, {});
  EXPECT_EQ(out.shape(), (Shape{5, 8}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(GlobalSubmodule, ZeroGlobalHeadsIsContractError) {
  Rng rng(6);
  const BlockWeights w = random_block(BlockGene{0, 3, 12, 2, 2, 3}, 3, 12, rng);
  EXPECT_THROW(global_submodule(random_tensor({5, 12}, rng), config(0, 3), w, {}), ContractError);
}

TEST(LocalSubmodule, ShapeForEveryChoice) {
  Rng rng(7);
  for (int e : {1, 2, 4})
    for (int k : {1, 3, 7}) {
      const BlockConfig bc = config(1, 2, 12, 12, e, k);
      const BlockWeights w = random_block(BlockGene{1, 2, 12, 2, e, k}, 3, 12, rng);
      EXPECT_EQ(local_submodule(random_tensor({9, 12}, rng), bc, w, {}).shape(), (Shape{9, 8}));
    }
}

TEST(LocalSubmodule, ZeroInputZeroBiasesGiveZero) {
  Rng rng(8);
  const BlockConfig bc = config(0, 3);
  BlockWeights w = random_block(BlockGene{0, 3, 12, 2, 2, 3}, 3, 12, rng);
  for (auto& c : w.conv) {
    for (Tensor* t : {&c.pw1_b, &c.norm1_b, &c.norm2_b, &c.pw2_b})
      for (double& v : t->mutable_data()) v = 0.0;
  }
  const Tensor out = local_submodule(Tensor::zeros({5, 12}), bc, w, {});
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LocalSubmodule, MatchesManualComposition) {
  Rng rng(9);
  const int d = 12;
  const BlockConfig bc = BlockConfig::from_gene(BlockGene{0, 3, 12, 2, 2, 17}, 3, d);
  const BlockWeights w = random_block(BlockGene{0, 3, 12, 2, 2, 17}, 3, d, rng);
  const Tensor x = random_tensor({20, 12}, rng);
  std::vector<Tensor> heads;
  for (const auto& c : w.conv) {
    Tensor h = add_bias(matmul(x, c.pw1_w), c.pw1_b);
    h = layer_norm(h, c.norm1_g, c.norm1_b, 1e-6);
    h = glu(h);
    h = conv1d_depthwise(h, c.dw_w);
    h = swish(layer_norm(h, c.norm2_g, c.norm2_b, 1e-6));
    heads.push_back(add_bias(matmul(h, c.pw2_w), c.pw2_b));
  }
  EXPECT_EQ(vec(local_submodule(x, bc, w, {})), vec(concat_cols(heads)));
}

TEST(LocalSubmodule, EvenKernelIsConfigError) {
  Rng rng(10);
  const BlockWeights w = random_block(BlockGene{0, 3, 12, 2, 1, 3}, 3, 12, rng);
  BlockConfig bc = config(0, 3, 12, 12, 1, 3);
  bc.kernel = 4;
  EXPECT_THROW(conv_head(random_tensor({5, 12}, rng), bc, w.conv[0], {}), ConfigError);
}

TEST(GlModule, ZeroProjectionIsResidualOnly) {
  Rng rng(11);
  BlockWeights w = random_block(BlockGene{1, 2, 12, 2, 2, 3}, 3, 12, rng);
  for (Tensor* t : {&w.proj_w, &w.proj_b})
    for (double& v : t->mutable_data()) v = 0.0;
  const Tensor x = random_tensor({5, 12}, rng);
  EXPECT_EQ(vec(gl_module(x, config(1, 2), w, {})), vec(x));
}

TEST(GlModule, MixedBlockGradients) {
  Rng rng(12);
  const BlockConfig bc = config(1, 2);
  const BlockWeights w = random_block(BlockGene{1, 2, 12, 2, 2, 3}, 3, 12, rng);
  Tensor x = random_tensor({10, 12}, rng);
  std::vector<Tensor> inputs{x, w.q_w, w.k_w, w.v_w, w.proj_w, w.ln1_g, w.ln1_b};
  for (const auto& c : w.conv) {
    for (const Tensor& t : {c.pw1_w, c.pw1_b, c.norm1_g, c.dw_w, c.norm2_b, c.pw2_w}) inputs.push_back(t);
  }
  EXPECT_LT(testing::gradient_error([&] { return gl_module(x, bc, w, {5}); }, inputs), 1e-4);
}

TEST(Ffn, ZeroSecondLayerIsResidualOnly) {
  Rng rng(13);
  BlockWeights w = random_block(BlockGene{3, 0, 12, 2, 1, 3}, 3, 12, rng);
  for (Tensor* t : {&w.fc2_w, &w.fc2_b})
    for (double& v : t->mutable_data()) v = 0.0;
  const Tensor x = random_tensor({5, 12}, rng);
  EXPECT_EQ(vec(ffn(x, config(3, 0), w, {})), vec(x));
}

TEST(Ffn, MatchesManualComposition) {
  Rng rng(14);
  const BlockWeights w = random_block(BlockGene{3, 0, 12, 2, 1, 3}, 3, 12, rng);
  const Tensor x = random_tensor({5, 12}, rng);
  const Tensor manual = add(x, add_bias(matmul(swish(add_bias(matmul(layer_norm(x, w.ln2_g, w.ln2_b, 1e-6), w.fc1_w), w.fc1_b)), w.fc2_w), w.fc2_b));
  EXPECT_EQ(vec(ffn(x, config(3, 0), w, {})), vec(manual));
}

TEST(BlockForward, ShapePreservedForAllSplits) {
  Rng rng(15);
  for (int g = 0; g <= 3; ++g) {
    const BlockGene gene{g, 3 - g, 12, 2, 2, 3};
    const BlockWeights w = random_block(gene, 3, 12, rng);
    const BlockConfig bc = BlockConfig::from_gene(gene, 3, 12);
    EXPECT_EQ(block_forward(random_tensor({17, 12}, rng), bc, w, {}).shape(), (Shape{17, 12}));
  }
}

TEST(BlockForward, StackOfTwelvePreservesShape) {
  Rng rng(16);
  Tensor x = random_tensor({17, 12}, rng);
  for (int m = 0; m < 12; ++m) {
    const BlockGene gene{m % 4, 3 - m % 4, 12, 2, 2, 3};
    x = block_forward(x, BlockConfig::from_gene(gene, 3, 12), random_block(gene, 3, 12, rng, 0.1), {});
  }
  EXPECT_EQ(x.shape(), (Shape{17, 12}));
}

TEST(BlockForward, TwoBlockGradients) {
  Rng rng(17);
  const BlockGene g1{2, 1, 12, 2, 2, 3}, g2{0, 3, 12, 1, 1, 5};
  const BlockWeights w1 = random_block(g1, 3, 12, rng), w2 = random_block(g2, 3, 12, rng);
  Tensor x = random_tensor({8, 12}, rng);
  const auto f = [&] {
    const ForwardContext ctx{4};
    return block_forward(block_forward(x, BlockConfig::from_gene(g1, 3, 12), w1, ctx),
                         BlockConfig::from_gene(g2, 3, 12), w2, ctx);
  };
  EXPECT_LT(testing::gradient_error(f, {x, w1.q_w, w1.fc1_w, w1.conv[0].dw_w, w2.conv[2].pw1_w, w2.fc2_w, w2.ln1_g}), 1e-4);
}

testing::VitWeights vit_from(const BlockWeights& w, std::size_t d, std::size_t heads, std::size_t hd,
                             std::size_t hidden) {
  return {d, heads, hd, hidden, vec(w.ln1_g), vec(w.ln1_b), vec(w.q_w), vec(w.q_b),
          vec(w.k_w), vec(w.k_b), vec(w.v_w), vec(w.v_b), vec(w.proj_w), vec(w.proj_b),
          vec(w.ln2_g), vec(w.ln2_b), vec(w.fc1_w), vec(w.fc1_b), vec(w.fc2_w), vec(w.fc2_b)};
}

TEST(Degeneracy, AllGlobalBlockEqualsReferenceVit) {
  Rng rng(18);
  const BlockGene gene{3, 0, 24, 2, 1, 3};
  const BlockConfig bc = BlockConfig::from_gene(gene, 3, 12);
  const BlockWeights w = random_block(gene, 3, 12, rng);
  const auto ref = vit_from(w, 12, 3, 8, 24);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({7, 12}, rng);
    const auto expect = testing::ref_vit_block(vec(x), 7, ref);
    const auto got = vec(block_forward(x, bc, w, {}));
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - expect[i]));
  }
  EXPECT_LE(worst, 1e-12);
}

}  // namespace
}  // namespace glit
