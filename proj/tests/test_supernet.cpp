#include <gtest/gtest.h>

#include <set>

#include "glit/errors.hpp"
#include "glit/flops.hpp"
#include "glit/rng.hpp"
#include "glit/supernet.hpp"
#include "test_util.hpp"

namespace glit {
namespace {

ModelConfig tiny_model(int m = 2, int n = 3, int d = 12) {
  ModelConfig cfg;
  cfg.image = {3, 8, 8, 2};
  cfg.embed_dim = d;
  cfg.num_heads = n;
  cfg.num_blocks = m;
  cfg.num_classes = 4;
  return cfg;
}

SearchSpaceSpec tiny_space(int m = 2, int n = 3) {
  SearchSpaceSpec s;
  s.num_blocks = m;
  s.num_heads = n;
  s.qkv_dims = {6, 12};
  s.ffn_ratios = {1, 2};
  s.expansions = {1, 2};
  s.kernels = {1, 3};
  s.defaults = {12, 2, 2, 3};
  return s;
}

Tensor random_patches(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
  std::vector<double> px(batch * cfg.image.pixels());
  for (double& v : px) v = rng.uniform();
  return patchify_batch(px, batch, cfg.image);
}

Supernet random_supernet(const ModelConfig& cfg, const SearchSpaceSpec& space, std::uint64_t seed) {
  Rng rng(seed);
  Supernet sn = Supernet::build(cfg, space, rng);
  testing::randomize(sn.params(), rng, 0.3);
  return sn;
}

std::size_t index_of(const Supernet& sn, const std::string& name) {
  for (std::size_t i = 0; i < sn.params().size(); ++i)
    if (sn.params()[i].name == name) return i;
  ADD_FAILURE() << "no parameter " << name;
  return 0;
}

TEST(Supernet, ParamCountMatchesClosedForm) {
  const int m = 2, n = 4, d = 64;
  ModelConfig cfg = tiny_model(m, n, d);
  SearchSpaceSpec s = SearchSpaceSpec::table2();
  s.num_blocks = m;
  s.num_heads = n;
  s.qkv_dims = {32, 64, 128};
  s.kernels = {3, 5, 7};
  s.defaults = {64, 4, 2, 5};
  Rng rng(1);
  const Supernet sn = Supernet::build(cfg, s, rng);
  const std::size_t dk = 128, dl = d / n, inner = 4 * dl, kmax = 7, hidden = 6 * d;
  const std::size_t token_dim = 3 * 4 * 4, tokens = 5, classes = 4;
  const std::size_t conv_head = d * 2 * inner + 2 * inner + 2 * 2 * inner + inner * kmax + 2 * inner +
                                inner * dl + dl;
  const std::size_t block = 2 * d + 3 * (d * dk + dk) + n * conv_head + dk * d + n * dl * d + d + 2 * d +
                            d * hidden + hidden + hidden * d + d;
  const std::size_t expected = token_dim * d + d + d + tokens * d + m * block + d * classes + classes;
  EXPECT_EQ(sn.param_count(), expected);
  EXPECT_EQ(supernet_param_count(cfg, s), expected);
}

TEST(Supernet, BuildIsDeterministic) {
  Rng a(7), b(7);
  const Supernet x = Supernet::build(tiny_model(), tiny_space(), a);
  const Supernet y = Supernet::build(tiny_model(), tiny_space(), b);
  ASSERT_EQ(x.params().size(), y.params().size());
  for (std::size_t i = 0; i < x.params().size(); ++i) {
    EXPECT_EQ(x.params()[i].name, y.params()[i].name);
    EXPECT_TRUE(testing::bit_equal(x.params()[i].tensor, y.params()[i].tensor)) << x.params()[i].name;
  }
}

TEST(Supernet, InconsistentConfigRejected) {
  Rng rng(1);
  EXPECT_THROW(Supernet::build(tiny_model(3), tiny_space(2), rng), ConfigError);
  SearchSpaceSpec s = tiny_space();
  s.qkv_dims = {6, 13};
  EXPECT_THROW(Supernet::build(tiny_model(), s, rng), ConfigError);
}

TEST(Supernet, MaxGenotypeTouchesEverything) {
  const SearchSpaceSpec s = reduce_for_stage2(std::vector<std::pair<int, int>>{{3, 0}, {0, 3}}, tiny_space());
  Rng rng(2);
  const Supernet sn = Supernet::build(tiny_model(), s, rng);
  Genotype g;
  g.blocks = {{3, 0, 12, 2, 1, 1}, {0, 3, 6, 2, 2, 3}};
  EXPECT_EQ(sn.plan(g).touched(), sn.param_count());
  const SearchSpaceSpec mixed = reduce_for_stage2(std::vector<std::pair<int, int>>{{1, 2}, {2, 1}}, tiny_space());
  const Supernet sm = Supernet::build(tiny_model(), mixed, rng);
  Genotype gm;
  gm.blocks = {{1, 2, 12, 2, 2, 3}, {2, 1, 12, 2, 2, 3}};
  EXPECT_EQ(sm.plan(gm).touched(), sm.param_count());
}

TEST(Supernet, KernelSliceIsCentred) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 3);
  Genotype g;
  g.blocks = {{0, 3, 6, 1, 1, 1}, {0, 3, 6, 1, 1, 3}};
  const PathSample p = sn.plan(g);
  const std::size_t i0 = index_of(sn, "blocks.0.conv.1.dw_w"), i1 = index_of(sn, "blocks.1.conv.1.dw_w");
  // [inner=4 x 3]; E=1 uses rows 0-3 of 8, K=1 uses the middle tap.
  const Tensor& w0 = sn.params()[i0].tensor;
  ASSERT_EQ(w0.shape(), (Shape{8, 3}));
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(p.masks[i0][r * 3 + c], r < 4 && c == 1);
      EXPECT_EQ(p.masks[i1][r * 3 + c], r < 4);
    }
  // The K=1 path's kernel is exactly the centre column.
  const ModelWeights w = sn.path_weights(g);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(w.blocks[0].conv[1].dw_w.at(r, 0), w0.at(r, 1));
}

TEST(Supernet, SlicePlansAreNested) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 4);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Genotype small = sample_uniform(sn.space(), rng), big = small;
    for (BlockGene& b : big.blocks) {
      b.qkv_dim = 12;
      b.ffn_ratio = 2;
      b.expansion = 2;
      b.kernel = 3;
    }
    big = canonicalize(big, sn.space());
    const PathSample ps = sn.plan(small), pb = sn.plan(big);
    for (std::size_t i = 0; i < ps.masks.size(); ++i)
      for (std::size_t j = 0; j < ps.masks[i].size(); ++j)
        if (ps.masks[i][j]) ASSERT_TRUE(pb.masks[i][j]) << sn.params()[i].name << " " << j;
  }
}

TEST(Supernet, UnusedSlicesGetZeroGradient) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 6);
  Rng rng(7);
  const Tensor x = random_patches(sn.config(), 3, rng);
  for (int trial = 0; trial < 30; ++trial) {
    for (const NamedTensor& p : sn.params()) Tensor(p.tensor).zero_grad();
    const Genotype g = sample_uniform(sn.space(), rng);
    const PathSample plan = sn.plan(g);
    const Tensor logits = sn.forward_path(g, x);
    sum(mul(logits, logits)).backward();
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < sn.params().size(); ++i) {
      const Tensor& t = sn.params()[i].tensor;
      if (!t.has_grad()) {
        for (std::uint8_t m : plan.masks[i]) EXPECT_EQ(m, 0) << sn.params()[i].name;
        continue;
      }
      for (std::size_t j = 0; j < t.numel(); ++j) {
        if (!plan.masks[i][j]) EXPECT_EQ(t.grad()[j], 0.0) << sn.params()[i].name << " " << j;
        nonzero += t.grad()[j] != 0.0;
      }
    }
    EXPECT_GT(nonzero, 0u);
  }
}

TEST(Supernet, ForwardLeavesWeightsUnchanged) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 8);
  std::vector<std::vector<double>> before;
  for (const NamedTensor& p : sn.params()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  Rng rng(9);
  const Tensor x = random_patches(sn.config(), 2, rng);
  for (int i = 0; i < 10; ++i) sn.forward_path(sample_uniform(sn.space(), rng), x);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(before[i], std::vector<double>(sn.params()[i].tensor.data().begin(), sn.params()[i].tensor.data().end()));
}

TEST(Supernet, ExtractionEquivalenceOverWholeSpace) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 10);
  Rng rng(11);
  const Tensor x = random_patches(sn.config(), 2, rng);
  const auto all = enumerate_all(sn.space());
  const std::set<Genotype> distinct(all.begin(), all.end());
  // Per block 2*2 + 2*2*2 + 2*16 = 44 distinct networks.
  ASSERT_EQ(distinct.size(), 44u * 44u);
  NoGradGuard guard;
  for (const Genotype& g : distinct) {
    const GlitModel model = sn.extract(g);
    EXPECT_TRUE(testing::bit_equal(sn.forward_path(g, x), model.forward(x))) << g.to_string();
    EXPECT_EQ(model.param_count(), param_count(g, sn.config())) << g.to_string();
  }
}

TEST(Supernet, ExtractIsACopy) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 12);
  Rng rng(13);
  const Tensor x = random_patches(sn.config(), 2, rng);
  const Genotype g = sample_uniform(sn.space(), rng);
  const GlitModel model = sn.extract(g);
  const Tensor before = model.forward(x);
  for (const NamedTensor& p : sn.params())
    for (double& v : Tensor(p.tensor).mutable_data()) v += 1.0;
  EXPECT_TRUE(testing::bit_equal(model.forward(x), before));
  EXPECT_FALSE(testing::bit_equal(sn.forward_path(g, x), before));
}

TEST(Supernet, InvalidGenotypeRejected) {
  const Supernet sn = random_supernet(tiny_model(), tiny_space(), 14);
  Rng rng(15);
  const Tensor x = random_patches(sn.config(), 1, rng);
  Genotype g;
  g.blocks = {{3, 0, 9, 1, 1, 1}, {0, 3, 6, 1, 1, 5}};
  EXPECT_THROW(sn.forward_path(g, x), ValidationError);
  EXPECT_THROW(sn.extract(g), ValidationError);
  EXPECT_THROW(sn.plan(g), ValidationError);
}

TEST(Supernet, SingleCandidateMatchesStandaloneInit) {
  SearchSpaceSpec s = tiny_space();
  s.qkv_dims = {12};
  s.ffn_ratios = {2};
  s.expansions = {2};
  s.kernels = {3};
  s = reduce_for_stage2(std::vector<std::pair<int, int>>{{1, 2}, {3, 0}}, s);
  ASSERT_EQ(space_size(s), 1);
  Rng a(21), b(21);
  const Supernet sn = Supernet::build(tiny_model(), s, a);
  const Genotype g = enumerate_all(s).front();
  const GlitModel model = GlitModel::init(tiny_model(), g, b);
  const Tensor x = random_patches(sn.config(), 2, a);
  EXPECT_TRUE(testing::bit_equal(sn.forward_path(g, x), model.forward(x)));
  EXPECT_EQ(sn.param_count(), model.param_count());
}

TEST(Supernet, LoadRoundTripAndShapeCheck) {
  const Supernet src = random_supernet(tiny_model(), tiny_space(), 16);
  Rng rng(17);
  Supernet dst = Supernet::build(tiny_model(), tiny_space(), rng);
  dst.load(src.params());
  for (std::size_t i = 0; i < src.params().size(); ++i)
    EXPECT_TRUE(testing::bit_equal(src.params()[i].tensor, dst.params()[i].tensor));
  ParamList bad = src.params();
  bad.pop_back();
  EXPECT_ANY_THROW(dst.load(bad));
}

}  // namespace
}  // namespace glit
