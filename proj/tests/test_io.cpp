#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "glit/errors.hpp"
#include "glit/io.hpp"
#include "glit/rng.hpp"
#include "test_util.hpp"

namespace glit {
namespace {

namespace fs = std::filesystem;

using testing::TempDir;

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.image = {3, 8, 8, 2};
  cfg.embed_dim = 12;
  cfg.num_heads = 3;
  cfg.num_blocks = 2;
  cfg.num_classes = 4;
  return cfg;
}

SearchSpaceSpec tiny_space() {
  SearchSpaceSpec s;
  s.num_blocks = 2;
  s.num_heads = 3;
  s.qkv_dims = {6, 12};
  s.ffn_ratios = {1, 2};
  s.expansions = {1, 2};
  s.kernels = {1, 3};
  s.defaults = {12, 2, 2, 3};
  return s;
}

GlitModel random_model(std::uint64_t seed) {
  Rng rng(seed);
  const Genotype g = Genotype::parse("2;(1,2,12,2,2,3)|(0,3,6,1,1,1)");
  GlitModel m = GlitModel::init(tiny_model(), g, rng);
  testing::randomize(m.params(), rng, 0.3);
  return m;
}

Tensor batch(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(3 * tiny_model().image.pixels());
  for (double& v : px) v = rng.uniform();
  return patchify_batch(px, 3, tiny_model().image);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  const GlitModel m = random_model(1);
  save_checkpoint(dir.file("a.ckpt"), model_checkpoint(m));
  const GlitModel back = model_from_checkpoint(load_checkpoint(dir.file("a.ckpt")));
  save_checkpoint(dir.file("b.ckpt"), model_checkpoint(back));
  EXPECT_EQ(read_file(dir.file("a.ckpt")), read_file(dir.file("b.ckpt")));
  EXPECT_FALSE(fs::exists(dir.file("a.ckpt.tmp")));
}

TEST(Checkpoint, LoadedModelForwardIsExact) {
  const GlitModel m = random_model(2);
  const GlitModel back = model_from_checkpoint(decode_checkpoint(encode_checkpoint(model_checkpoint(m))));
  const Tensor x = batch(3);
  EXPECT_TRUE(testing::bit_equal(m.forward(x), back.forward(x)));
  EXPECT_EQ(back.genotype().to_string(), m.genotype().to_string());
  EXPECT_EQ(back.config().to_string(), m.config().to_string());
}

TEST(Checkpoint, SpecialValuesSurvive) {
  Checkpoint c;
  c.meta["kind"] = "raw";
  c.tensors.push_back({"x", Tensor::from({5}, {0.0, -0.0, 1e-310, std::numeric_limits<double>::infinity(),
                                               std::numeric_limits<double>::quiet_NaN()})});
  c.tensors.push_back({"s", Tensor::scalar(3.5)});
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_TRUE(testing::bit_equal(back.tensors[0].tensor, c.tensors[0].tensor));
  EXPECT_EQ(back.tensors[1].tensor.shape(), Shape{});
  EXPECT_EQ(back.meta, c.meta);
}

TEST(Checkpoint, SupernetRoundTrip) {
  Rng rng(4);
  Supernet sn = Supernet::build(tiny_model(), tiny_space(), rng);
  testing::randomize(sn.params(), rng, 0.3);
  const std::string bytes = encode_checkpoint(supernet_checkpoint(sn));
  const Supernet back = supernet_from_checkpoint(decode_checkpoint(bytes));
  EXPECT_EQ(encode_checkpoint(supernet_checkpoint(back)), bytes);
  const Tensor x = batch(5);
  for (int i = 0; i < 10; ++i) {
    const Genotype g = sample_uniform(tiny_space(), rng);
    EXPECT_TRUE(testing::bit_equal(sn.forward_path(g, x), back.forward_path(g, x)));
  }
  EXPECT_THROW(model_from_checkpoint(decode_checkpoint(bytes)), FormatError);
}

TEST(Checkpoint, TruncationNamesTheTensor) {
  const std::string bytes = encode_checkpoint(model_checkpoint(random_model(6)));
  std::size_t cuts = 0;
  for (std::size_t len = 0; len < bytes.size(); len += 97) {
    try {
      decode_checkpoint(bytes.substr(0, len));
      FAIL() << "accepted a " << len << "-byte prefix";
    } catch (const FormatError&) {
      ++cuts;
    }
  }
  EXPECT_GT(cuts, 10u);
  try {
    decode_checkpoint(bytes.substr(0, bytes.size() - 20));
    FAIL();
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("tensor 'head_b'"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, StructuredErrors) {
  std::string bytes = encode_checkpoint(model_checkpoint(random_model(7)));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const CorruptionError&) {
    FAIL() << "version mismatch reported as corruption";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  bad = bytes;
  bad[bad.size() - 30] ^= 0x10;
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CorruptionError);
  // Zero extent in the first tensor's shape ("patch.proj_w", rank 2).
  const std::size_t meta_len = static_cast<unsigned char>(bytes[6]) | static_cast<unsigned char>(bytes[7]) << 8;
  const std::size_t extent = 4 + 2 + 4 + meta_len + 4 + 2 + 12 + 1 + 1;
  bad = bytes;
  for (std::size_t i = 0; i < 8; ++i) bad[extent + i] = 0;
  EXPECT_THROW(decode_checkpoint(bad), CorruptionError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), MissingArtifactError);
}

TEST(Checkpoint, MismatchedGenotypeRejected) {
  Checkpoint c = model_checkpoint(random_model(8));
  c.meta["genotype"] = "2;(3,0,12,2,2,3)|(0,3,6,1,1,1)";
  EXPECT_THROW(model_from_checkpoint(c), FormatError);
  c.meta.erase("genotype");
  EXPECT_THROW(model_from_checkpoint(c), FormatError);
}

TEST(Dataset, RoundTripThousandSamples) {
  TempDir dir;
  const Dataset ds = gen_synthetic(SyntheticKind::kSeparable, 1000, {3, 8, 8, 4}, 9);
  save_dataset(dir.file("d.glds"), ds);
  const Dataset back = load_dataset(dir.file("d.glds"));
  ASSERT_EQ(back.size(), 1000u);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.pixels, ds.pixels);
  EXPECT_EQ(fs::file_size(dir.file("d.glds")), 4u + 2 + 4 + 8 + 1000 * (2 + 3 * 8 * 8));
}

TEST(Dataset, ZeroSamples) {
  Dataset empty{3, 8, 8, 4, {}, {}};
  const Dataset back = decode_dataset(encode_dataset(empty));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.width, 8);
}

TEST(Dataset, StructuredErrors) {
  const std::string bytes = encode_dataset(gen_synthetic(SyntheticKind::kLocality, 5, {1, 8, 8, 3}, 1));
  std::string bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  EXPECT_THROW(decode_dataset(bytes + std::string(1, '\0')), CorruptionError);
  bad = bytes;
  bad[18] = 9;  // first label
  EXPECT_THROW(decode_dataset(bad), CorruptionError);
  bad = bytes;
  bad[4] = 7;
  EXPECT_THROW(decode_dataset(bad), FormatError);
}

TEST(Synthetic, FixedSeedIsByteIdentical) {
  for (SyntheticKind k : {SyntheticKind::kSeparable, SyntheticKind::kLocality}) {
    EXPECT_EQ(encode_dataset(gen_synthetic(k, 50, {}, 3)), encode_dataset(gen_synthetic(k, 50, {}, 3)));
    EXPECT_NE(encode_dataset(gen_synthetic(k, 50, {}, 3)), encode_dataset(gen_synthetic(k, 50, {}, 4)));
  }
}

TEST(Synthetic, SeparableRuleScoresPerfectly) {
  const SyntheticSpec spec{3, 32, 32, 10};
  const Dataset ds = gen_synthetic(SyntheticKind::kSeparable, 200, spec, 5);
  const LinearRule rule = separable_rule(spec, 5);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(rule.predict(ds.image(i)), ds.labels[i]);
  std::vector<int> counts(10);
  for (int l : ds.labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 20);
}

TEST(Synthetic, LocalityLabelDependsOnlyOnMotif) {
  const SyntheticSpec spec{3, 16, 16, 4};
  const Dataset ds = gen_synthetic(SyntheticKind::kLocality, 40, spec, 6);
  // Every image holds exactly one kMotifSize square of saturated pixels; the
  // label is a function of that square's pattern alone.
  std::map<std::vector<std::uint8_t>, int> motif_label;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    int found = 0;
    for (int y = 0; y + kMotifSize <= spec.height; ++y)
      for (int x = 0; x + kMotifSize <= spec.width; ++x) {
        std::vector<std::uint8_t> patch;
        bool saturated = true;
        for (int dy = 0; dy < kMotifSize && saturated; ++dy)
          for (int dx = 0; dx < kMotifSize; ++dx) {
            const std::uint8_t v = img[(y + dy) * spec.width + x + dx];
            saturated &= v == 0 || v == 255;
            patch.push_back(v);
          }
        if (!saturated) continue;
        ++found;
        const auto [it, fresh] = motif_label.emplace(patch, ds.labels[i]);
        EXPECT_EQ(it->second, ds.labels[i]);
      }
    EXPECT_EQ(found, 1) << "sample " << i;
  }
  EXPECT_EQ(motif_label.size(), 4u);
}

TEST(Synthetic, LocalityInvariantToShufflingBackground) {
  // The motif detector above sees the same motif after the background is
  // permuted, so the label stays fixed.
  const SyntheticSpec spec{1, 16, 16, 3};
  Dataset ds = gen_synthetic(SyntheticKind::kLocality, 10, spec, 7);
  std::mt19937 perm(1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::uint8_t* img = ds.pixels.data() + i * ds.image_bytes();
    std::vector<std::size_t> bg;
    for (std::size_t p = 0; p < ds.image_bytes(); ++p)
      if (img[p] != 0 && img[p] != 255) bg.push_back(p);
    std::vector<std::uint8_t> values;
    for (std::size_t p : bg) values.push_back(img[p]);
    std::shuffle(values.begin(), values.end(), perm);
    for (std::size_t k = 0; k < bg.size(); ++k) img[bg[k]] = values[k];
  }
  const Dataset original = gen_synthetic(SyntheticKind::kLocality, 10, spec, 7);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto a = ds.image(i), b = original.image(i);
    for (std::size_t p = 0; p < a.size(); ++p)
      if (b[p] == 0 || b[p] == 255) EXPECT_EQ(a[p], b[p]);
  }
  EXPECT_EQ(ds.labels, original.labels);
}

TEST(Split, DisjointAndDeterministic) {
  Dataset all = gen_synthetic(SyntheticKind::kSeparable, 100, {1, 4, 4, 2}, 1);
  for (std::size_t i = 0; i < all.size(); ++i) all.pixels[i * all.image_bytes()] = static_cast<std::uint8_t>(i);
  const DatasetSplit a = carve_split(all, 20, 10, 5), b = carve_split(all, 20, 10, 5);
  EXPECT_EQ(a.val.size(), 20u);
  EXPECT_EQ(a.test.size(), 10u);
  EXPECT_EQ(a.train.size(), 70u);
  EXPECT_EQ(a.train.pixels, b.train.pixels);
  std::set<int> seen;
  for (const Dataset* d : {&a.train, &a.val, &a.test})
    for (std::size_t i = 0; i < d->size(); ++i) EXPECT_TRUE(seen.insert(d->image(i)[0]).second);
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_THROW(carve_split(all, 80, 30, 1), ConfigError);
}

TEST(Files, MissingFileIsMissingArtifact) {
  EXPECT_THROW(read_file("/nonexistent/glit/file"), MissingArtifactError);
  EXPECT_THROW(load_dataset("/nonexistent/glit/data.glds"), MissingArtifactError);
}

}  // namespace
}  // namespace glit
