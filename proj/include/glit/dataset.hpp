#pragma once

// In-memory image datasets, split carving and the synthetic generators.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glit/patch_embed.hpp"

namespace glit {

class Rng;

struct Dataset {
  int channels = 3;
  int width = 32;
  int height = 32;
  int num_classes = 10;
  std::vector<std::uint8_t> pixels;  // [n][c][h][w]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return static_cast<std::size_t>(channels) * width * height; }
  std::span<const std::uint8_t> image(std::size_t i) const;

  Dataset subset(std::span<const std::size_t> indices) const;
  // Throws DimensionError unless the model's image geometry matches.
  void require_shape(const ImageSpec& spec) const;
  // Images i in `indices` as [count*m^2 x token_dim] patches, values /255.
  Tensor patches(std::span<const std::size_t> indices, const ImageSpec& spec,
                 std::span<const std::uint8_t> flip = {}) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset val;   // carved from the training pool, used for search fitness
  Dataset test;  // never touched during search
  std::uint64_t seed = 0;
};

// Seeded shuffle, then the first n_val samples become val, the next n_test
// test, the rest train.
DatasetSplit carve_split(const Dataset& all, std::size_t n_val, std::size_t n_test,
                         std::uint64_t seed);

enum class SyntheticKind { kSeparable, kLocality };

const char* synthetic_name(SyntheticKind kind);
SyntheticKind parse_synthetic(const std::string& name);

struct SyntheticSpec {
  int channels = 3;
  int width = 32;
  int height = 32;
  int num_classes = 10;
};

// kSeparable: the label is argmax_c <w_c, x> + b_c for fixed functionals, with
// samples closer than a margin to a decision boundary rejected.
// kLocality: low-noise background plus one of C equal-mean motifs at a random
// kMotifSize-aligned position; the motif alone determines the label.
Dataset gen_synthetic(SyntheticKind kind, std::size_t n, const SyntheticSpec& spec,
                      std::uint64_t seed);

// The functionals that define kSeparable labels: weights [C][pixels] in
// `weights`, offsets in `bias`. Pixels are taken in [0, 1].
struct LinearRule {
  std::vector<double> weights;
  std::vector<double> bias;
  int predict(std::span<const std::uint8_t> image) const;
};
LinearRule separable_rule(const SyntheticSpec& spec, std::uint64_t seed);

inline constexpr int kMotifSize = 4;

}  // namespace glit
