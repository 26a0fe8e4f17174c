#include "glit/gl_block.hpp"

#include <cmath>
#include <string>

#include "glit/errors.hpp"
#include "glit/rng.hpp"
#include "glit/search_space.hpp"

namespace glit {

BlockConfig BlockConfig::from_gene(const BlockGene& gene, int num_heads, int embed_dim,
                                   double dropout) {
  BlockConfig cfg;
  cfg.global_heads = gene.global_heads;
  cfg.local_heads = gene.local_heads;
  cfg.num_heads = num_heads;
  cfg.embed_dim = embed_dim;
  cfg.qkv_dim = gene.qkv_dim;
  cfg.expansion = gene.expansion;
  cfg.kernel = gene.kernel;
  cfg.ffn_ratio = gene.ffn_ratio;
  cfg.dropout = dropout;
  return cfg;
}

void BlockConfig::check() const {
  auto fail = [](const std::string& msg) { throw ConfigError("block config: " + msg); };
  if (global_heads < 0 || local_heads < 0) fail("head counts must be non-negative");
  if (global_heads + local_heads != num_heads) fail("G + L must equal N");
  if (global_heads == 0 && local_heads == 0) fail("block needs at least one head");
  if (embed_dim < 1 || embed_dim % num_heads != 0) fail("d must be a positive multiple of N");
  if (global_heads > 0 && (qkv_dim < num_heads || qkv_dim % num_heads != 0))
    fail("d_k=" + std::to_string(qkv_dim) + " must be a positive multiple of N");
  if (local_heads > 0) {
    if (kernel < 1 || kernel % 2 == 0) fail("kernel size must be odd, got " + std::to_string(kernel));
    if (expansion < 1) fail("expansion ratio E must be >= 1");
  }
  if (ffn_ratio < 1) fail("FFN ratio d_z must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

namespace {

Tensor maybe_dropout(const Tensor& x, const BlockConfig& cfg, const ForwardContext& ctx) {
  if (!ctx.training || cfg.dropout == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("dropout during training needs an rng");
  return dropout(x, cfg.dropout, *ctx.rng, true);
}

}  // namespace

Tensor attention_head(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt)), v);
}

Tensor global_submodule(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                        const ForwardContext& ctx) {
  if (cfg.global_heads < 1) throw ContractError("global_submodule called with G = 0");
  const Tensor q = linear(x, w.q_w, w.q_b);
  const Tensor k = linear(x, w.k_w, w.k_b);
  const Tensor v = linear(x, w.v_w, w.v_b);
  if (q.dim(1) != cfg.global_width()) {
    throw DimensionError("query projection width " + std::to_string(q.dim(1)) + ", expected " +
                         std::to_string(cfg.global_width()));
  }
  return multi_head_attention(q, k, v, static_cast<std::size_t>(cfg.global_heads), ctx.seq_len);
}

Tensor conv_head(const Tensor& x, const BlockConfig& cfg, const ConvHeadWeights& w,
                 const ForwardContext& ctx) {
  if (cfg.kernel % 2 == 0) {
    throw ConfigError("conv head kernel size must be odd, got " + std::to_string(cfg.kernel));
  }
  Tensor h = linear(x, w.pw1_w, w.pw1_b);
  h = glu(layer_norm(h, w.norm1_g, w.norm1_b, cfg.ln_eps));
  h = conv1d_depthwise(h, w.dw_w, ctx.seq_len);
  h = swish(layer_norm(h, w.norm2_g, w.norm2_b, cfg.ln_eps));
  h = maybe_dropout(h, cfg, ctx);
  return linear(h, w.pw2_w, w.pw2_b);
}

Tensor local_submodule(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                       const ForwardContext& ctx) {
  if (cfg.local_heads < 1) throw ContractError("local_submodule called with L = 0");
  if (w.conv.size() != static_cast<std::size_t>(cfg.local_heads)) {
    throw DimensionError("block has " + std::to_string(w.conv.size()) + " conv heads, config wants " +
                         std::to_string(cfg.local_heads));
  }
  std::vector<Tensor> heads;
  heads.reserve(w.conv.size());
  for (const ConvHeadWeights& head : w.conv) heads.push_back(conv_head(x, cfg, head, ctx));
  return heads.size() == 1 ? heads.front() : concat_cols(heads);
}

Tensor gl_module(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                 const ForwardContext& ctx) {
  cfg.check();
  const Tensor xn = layer_norm(x, w.ln1_g, w.ln1_b, cfg.ln_eps);
  std::vector<Tensor> parts;
  if (cfg.global_heads > 0) parts.push_back(global_submodule(xn, cfg, w, ctx));
  if (cfg.local_heads > 0) parts.push_back(local_submodule(xn, cfg, w, ctx));
  const Tensor heads = parts.size() == 1 ? parts.front() : concat_cols(parts);
  return add(x, linear(heads, w.proj_w, w.proj_b));
}

Tensor ffn(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
           const ForwardContext& ctx) {
  Tensor h = swish(linear(layer_norm(x, w.ln2_g, w.ln2_b, cfg.ln_eps), w.fc1_w, w.fc1_b));
  h = maybe_dropout(h, cfg, ctx);
  return add(x, linear(h, w.fc2_w, w.fc2_b));
}

Tensor block_forward(const Tensor& x, const BlockConfig& cfg, const BlockWeights& w,
                     const ForwardContext& ctx) {
  return ffn(gl_module(x, cfg, w, ctx), cfg, w, ctx);
}

}  // namespace glit
