#pragma once

// Global-local transformer block: a pre-norm head module mixing G
// self-attention heads with L convolution heads, then a pre-norm Swish FFN,
// both with residual connections.

#include <cstddef>
#include <vector>

#include "glit/tensor.hpp"

namespace glit {

class Rng;
struct BlockGene;

struct BlockConfig {
  int global_heads = 3;  // G
  int local_heads = 0;   // L
  int num_heads = 3;     // N = G + L
  int embed_dim = 192;   // d
  int qkv_dim = 192;     // d_k (= d_v), split evenly over N heads
  int expansion = 1;     // E
  int kernel = 31;       // K
  int ffn_ratio = 4;     // d_z
  double dropout = 0.0;
  double ln_eps = 1e-6;

  static BlockConfig from_gene(const BlockGene& gene, int num_heads, int embed_dim,
                               double dropout = 0.0);

  // Width of one attention head, d_k / N.
  std::size_t head_dim() const { return static_cast<std::size_t>(qkv_dim / num_heads); }
  // Width of one conv head, d / N.
  std::size_t local_dim() const { return static_cast<std::size_t>(embed_dim / num_heads); }
  std::size_t global_width() const { return global_heads * head_dim(); }
  std::size_t local_width() const { return local_heads * local_dim(); }
  // Channels after the conv head's GLU, E * d/N.
  std::size_t conv_inner() const { return expansion * local_dim(); }
  std::size_t ffn_hidden() const { return static_cast<std::size_t>(ffn_ratio * embed_dim); }

  void check() const;
};

struct ConvHeadWeights {
  Tensor pw1_w;    // [d x 2*inner]: value half then gate half
  Tensor pw1_b;    // [2*inner]
  Tensor norm1_g;  // [2*inner]
  Tensor norm1_b;
  Tensor dw_w;     // [inner x K]
  Tensor norm2_g;  // [inner]
  Tensor norm2_b;
  Tensor pw2_w;    // [inner x d/N]
  Tensor pw2_b;    // [d/N]
};

struct BlockWeights {
  Tensor ln1_g, ln1_b;                 // [d]
  Tensor q_w, q_b, k_w, k_b, v_w, v_b;  // [d x G*d_head], [G*d_head]; undefined if G = 0
  std::vector<ConvHeadWeights> conv;   // L entries
  Tensor proj_w;                       // [(G*d_head + L*d/N) x d]
  Tensor proj_b;                       // [d]
  Tensor ln2_g, ln2_b;                 // [d]
  Tensor fc1_w, fc1_b;                 // [d x d_z*d], [d_z*d]
  Tensor fc2_w, fc2_b;                 // [d_z*d x d], [d]
};

// Per-call settings. Rows of the input are consecutive sequences of seq_len
// tokens (0 = one sequence).
struct ForwardContext {
  std::size_t seq_len = 0;
  bool training = false;
  Rng* rng = nullptr;  // needed only when training with dropout > 0
};

// softmax(Q K^T / sqrt(d_head)) V for one head of one sequence.
Tensor attention_head(const Tensor& q, const Tensor& k, const Tensor& v);

// Attention over G heads of the (normalized) input: [rows x G*d_head].
Tensor global_submodule(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                        const ForwardContext& ctx);
// One conv head: pointwise -> LN -> GLU -> depthwise -> LN -> Swish -> dropout -> pointwise.
Tensor conv_head(const Tensor& x, const BlockConfig& cfg, const ConvHeadWeights& w,
                 const ForwardContext& ctx);
// L conv heads side by side: [rows x L*d/N].
Tensor local_submodule(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                       const ForwardContext& ctx);
// x + proj(concat(global, local)(LN(x))).
Tensor gl_module(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                 const ForwardContext& ctx);
// x + fc2(dropout(swish(fc1(LN(x))))).
Tensor ffn(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
           const ForwardContext& ctx);
Tensor block_forward(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                     const ForwardContext& ctx);

}  // namespace glit
