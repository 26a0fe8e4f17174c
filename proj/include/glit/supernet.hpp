#pragma once

// Weight-sharing supernet. Each block holds parameters wide enough for every
// choice reachable in its search space; a genotype's subnet is a slice view:
// leading channels for d_k, E and d_z, centred taps for K.

#include <cstddef>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "glit/model.hpp"
#include "glit/search_space.hpp"

namespace glit {

class Rng;

// Maximum widths one block must support.
struct BlockCapacity {
  std::size_t global_width = 0;  // max G * d_k / N
  int local_heads = 0;           // max L
  int expansion = 0;             // max E over local choices
  int kernel = 0;                // max K over local choices
  int ffn_ratio = 0;             // max d_z
};

BlockCapacity block_capacity(const SearchSpaceSpec& spec, std::size_t block);

struct SupernetBlock {
  Tensor ln1_g, ln1_b;
  Tensor q_w, q_b, k_w, k_b, v_w, v_b;  // [d x global_width]
  std::vector<ConvHeadWeights> conv;    // local_heads stacks sized for max E and K
  Tensor proj_global_w;                 // [global_width x d]
  Tensor proj_local_w;                  // [local_heads*d/N x d]
  Tensor proj_b;
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

// Per-parameter element mask, 1 where a path reads the element.
using SliceMask = std::vector<std::uint8_t>;

struct PathSample {
  Genotype genotype;
  std::vector<SliceMask> masks;  // aligned with Supernet::params()

  std::size_t touched() const;
};

class Supernet {
 public:
  // `cfg.num_blocks` and `cfg.num_heads` must agree with the space.
  static Supernet build(const ModelConfig& cfg, const SearchSpaceSpec& space, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const SearchSpaceSpec& space() const { return space_; }
  const std::vector<BlockCapacity>& capacity() const { return capacity_; }

  // Canonical order: patch, class token, pos emb, blocks, head.
  const ParamList& params() const { return params_; }
  std::size_t param_count() const { return count_scalars(params_); }

  // Slice views of the shared parameters for g; gradients flow back into them.
  // Throws ValidationError when g is not in the space.
  ModelWeights path_weights(const Genotype& g) const;
  PathSample plan(const Genotype& g) const;

  Tensor forward_path(const Genotype& g, const Tensor& patches, bool training = false,
                      Rng* rng = nullptr) const;

  // Standalone copy of g's slices.
  GlitModel extract(const Genotype& g) const;

  // Copies values into the parameters (names and shapes must match).
  void load(const ParamList& values);

 private:
  ModelWeights slice_path(const Genotype& g, std::vector<SliceMask>* masks) const;
  void index_params();

  ModelConfig config_;
  SearchSpaceSpec space_;
  std::vector<BlockCapacity> capacity_;
  EmbedWeights embed_;
  std::vector<SupernetBlock> blocks_;
  Tensor head_w_, head_b_;
  ParamList params_;
  std::unordered_map<const void*, std::size_t> index_;
};

}  // namespace glit
