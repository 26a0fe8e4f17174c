#pragma once

// Standalone GLiT network for one fixed genotype.

#include <cstddef>
#include <string>
#include <vector>

#include "glit/gl_block.hpp"
#include "glit/patch_embed.hpp"
#include "glit/search_space.hpp"
#include "glit/tensor.hpp"

namespace glit {

class Rng;

struct ModelConfig {
  ImageSpec image;
  int embed_dim = 48;  // d
  int num_heads = 3;   // N
  int num_blocks = 4;  // M
  int num_classes = 10;
  double dropout = 0.0;
  bool use_pos_emb = true;

  void check() const;
  std::string to_string() const;
  static ModelConfig parse(const std::string& text);
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

std::size_t count_scalars(const ParamList& params);

struct ModelWeights {
  EmbedWeights embed;
  std::vector<BlockWeights> blocks;
  Tensor head_w;  // [d x C]
  Tensor head_b;  // [C]
};

// Canonical names and order of every defined tensor in `w`.
ParamList named_params(const ModelWeights& w);

// Zero tensors shaped for (cfg, g).
ModelWeights allocate_weights(const ModelConfig& cfg, const Genotype& g, bool requires_grad);

// Initialization rule keyed on the parameter name: *_g ones, *_b and the class
// token zeros, everything else truncated normal with std 0.02.
void init_param(const std::string& name, Tensor& t, Rng& rng);

TokenSequence forward_tokens(const ModelWeights& w, const ModelConfig& cfg, const Genotype& g,
                             const Tensor& patches, const ForwardContext& ctx);
Tensor forward_logits(const ModelWeights& w, const ModelConfig& cfg, const Genotype& g,
                      const Tensor& patches, const ForwardContext& ctx);

class GlitModel {
 public:
  // Fresh parameters drawn from rng in named_params order.
  static GlitModel init(const ModelConfig& cfg, const Genotype& g, Rng& rng);
  static GlitModel zeros(const ModelConfig& cfg, const Genotype& g);
  // Deep copy of `w` into new leaf tensors.
  static GlitModel from_weights(const ModelConfig& cfg, const Genotype& g, const ModelWeights& w);

  // patches: [B*m^2 x token_dim] from patchify_batch. Returns [B x C].
  Tensor forward(const Tensor& patches, bool training = false, Rng* rng = nullptr) const;
  TokenSequence forward_tokens(const Tensor& patches) const;

  ParamList params() const { return named_params(weights_); }
  std::size_t param_count() const { return count_scalars(params()); }
  const ModelConfig& config() const { return config_; }
  const Genotype& genotype() const { return genotype_; }
  const ModelWeights& weights() const { return weights_; }

 private:
  GlitModel(ModelConfig cfg, Genotype g, ModelWeights w)
      : config_(std::move(cfg)), genotype_(std::move(g)), weights_(std::move(w)) {}

  ModelConfig config_;
  Genotype genotype_;
  ModelWeights weights_;
};

}  // namespace glit
