#include "glit/flops.hpp"

#include <iomanip>
#include <sstream>

#include "glit/gl_block.hpp"
#include "glit/supernet.hpp"

namespace glit {

namespace {

using u64 = std::uint64_t;

u64 u(int v) { return static_cast<u64>(v); }

u64 block_params(const BlockConfig& bc) {
  const u64 d = u(bc.embed_dim), gw = bc.global_width(), dl = bc.local_dim();
  const u64 inner = bc.conv_inner(), hidden = bc.ffn_hidden();
  u64 n = 2 * d;                                            // ln1
  if (bc.global_heads > 0) n += 3 * (d * gw + gw);          // q, k, v
  const u64 conv = d * 2 * inner + 2 * inner                // pw1
                   + 2 * 2 * inner                          // norm1
                   + inner * u(bc.kernel)                   // depthwise
                   + 2 * inner                              // norm2
                   + inner * dl + dl;                       // pw2
  n += u(bc.local_heads) * conv;
  n += (gw + bc.local_width()) * d + d;                     // proj
  n += 2 * d;                                               // ln2
  n += d * hidden + hidden + hidden * d + d;                // fc1, fc2
  return n;
}

u64 embed_params(const ModelConfig& cfg) {
  const u64 d = u(cfg.embed_dim);
  u64 n = cfg.image.token_dim() * d + d + d;
  if (cfg.use_pos_emb) n += cfg.image.num_tokens() * d;
  return n;
}

u64 head_params(const ModelConfig& cfg) { return u(cfg.embed_dim) * u(cfg.num_classes) + u(cfg.num_classes); }

}  // namespace

AttentionCost cost_attention(u64 tokens, u64 dim, u64 global_heads, u64 head_dim) {
  AttentionCost c;
  const u64 width = global_heads * head_dim;
  c.projections = 3 * tokens * dim * width;
  c.scores = 2 * tokens * tokens * width;
  c.softmax = cost::kSoftmax * tokens * tokens * global_heads;
  c.bias = cost::kAdd * 3 * tokens * width;
  return c;
}

ConvHeadCost cost_conv_head(u64 tokens, u64 dim, u64 local_dim, u64 expansion, u64 kernel) {
  ConvHeadCost c;
  const u64 inner = expansion * local_dim;
  c.pointwise = tokens * dim * 2 * inner + tokens * inner * local_dim;
  c.depthwise = tokens * inner * kernel;
  c.elementwise = cost::kAdd * tokens * 2 * inner         // pw1 bias
                  + cost::kLayerNorm * tokens * 2 * inner // norm1
                  + cost::kActivation * tokens * inner    // GLU
                  + cost::kLayerNorm * tokens * inner     // norm2
                  + cost::kActivation * tokens * inner    // Swish
                  + cost::kAdd * tokens * local_dim;      // pw2 bias
  return c;
}

CostReport cost_model(const Genotype& g, const ModelConfig& cfg) {
  cfg.check();
  const u64 d = u(cfg.embed_dim), T = cfg.image.num_tokens(), P = cfg.image.num_patches();
  CostReport r;

  CostRow embed{"patch_embed", P * cfg.image.token_dim() * d, cost::kAdd * P * d, embed_params(cfg)};
  if (cfg.use_pos_emb) embed.elementwise += cost::kAdd * T * d;
  r.rows.push_back(embed);

  for (std::size_t m = 0; m < g.blocks.size(); ++m) {
    const BlockConfig bc = BlockConfig::from_gene(g.blocks[m], cfg.num_heads, cfg.embed_dim);
    CostRow row{"block" + std::to_string(m), 0, 0, block_params(bc)};
    row.elementwise += cost::kLayerNorm * T * d;
    if (bc.global_heads > 0) {
      const AttentionCost a = cost_attention(T, d, u(bc.global_heads), bc.head_dim());
      row.macs += a.macs();
      row.elementwise += a.softmax + a.bias;
    }
    if (bc.local_heads > 0) {
      const ConvHeadCost c =
          cost_conv_head(T, d, bc.local_dim(), u(bc.expansion), u(bc.kernel));
      row.macs += u(bc.local_heads) * c.macs();
      row.elementwise += u(bc.local_heads) * c.elementwise;
    }
    const u64 heads_width = bc.global_width() + bc.local_width();
    row.macs += T * heads_width * d;           // proj
    row.elementwise += 2 * cost::kAdd * T * d; // proj bias, residual
    const u64 hidden = bc.ffn_hidden();
    row.elementwise += cost::kLayerNorm * T * d;
    row.macs += 2 * T * d * hidden;
    row.elementwise += cost::kAdd * T * hidden + cost::kActivation * T * hidden;
    row.elementwise += 2 * cost::kAdd * T * d; // fc2 bias, residual
    r.rows.push_back(row);
  }

  r.rows.push_back({"head", d * u(cfg.num_classes), cost::kAdd * u(cfg.num_classes), head_params(cfg)});
  for (const CostRow& row : r.rows) {
    r.macs += row.macs;
    r.flops += row.flops();
    r.params += row.params;
  }
  return r;
}

u64 param_count(const Genotype& g, const ModelConfig& cfg) {
  u64 n = embed_params(cfg) + head_params(cfg);
  for (const BlockGene& b : g.blocks)
    n += block_params(BlockConfig::from_gene(b, cfg.num_heads, cfg.embed_dim));
  return n;
}

u64 supernet_param_count(const ModelConfig& cfg, const SearchSpaceSpec& space) {
  const u64 d = u(cfg.embed_dim), dl = d / u(cfg.num_heads);
  u64 n = embed_params(cfg) + head_params(cfg);
  for (int m = 0; m < space.num_blocks; ++m) {
    const BlockCapacity cap = block_capacity(space, static_cast<std::size_t>(m));
    const u64 gw = cap.global_width, inner = u(cap.expansion) * dl, hidden = u(cap.ffn_ratio) * d;
    n += 2 * d + 3 * (d * gw + gw);
    n += u(cap.local_heads) * (d * 2 * inner + 2 * inner + 4 * inner + inner * u(cap.kernel) +
                               2 * inner + inner * dl + dl);
    n += (gw + u(cap.local_heads) * dl) * d + d;
    n += 2 * d + d * hidden + hidden + hidden * d + d;
  }
  return n;
}

std::string CostReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "part" << std::right << std::setw(16) << "MACs"
     << std::setw(16) << "FLOPs" << std::setw(12) << "params" << '\n';
  for (const CostRow& row : rows) {
    os << std::left << std::setw(14) << row.name << std::right << std::setw(16) << row.macs
       << std::setw(16) << row.flops() << std::setw(12) << row.params << '\n';
  }
  os << std::left << std::setw(14) << "total" << std::right << std::setw(16) << macs
     << std::setw(16) << flops << std::setw(12) << params << '\n';
  os << std::fixed << std::setprecision(3) << "GMACs " << gmacs() << "  GFLOPs " << gflops()
     << "  params(M) " << static_cast<double>(params) * 1e-6 << '\n';
  return os.str();
}

std::string CostReport::machine_line() const {
  return "macs=" + std::to_string(macs) + " flops=" + std::to_string(flops) +
         " params=" + std::to_string(params);
}

ModelConfig deit_tiny_config() {
  ModelConfig cfg;
  cfg.image = {3, 224, 224, 14};
  cfg.embed_dim = 192;
  cfg.num_heads = 3;
  cfg.num_blocks = 12;
  cfg.num_classes = 1000;
  return cfg;
}

Genotype deit_tiny_genotype() {
  Genotype g;
  g.blocks.assign(12, BlockGene{3, 0, 192, 4, 1, 17});
  return g;
}

}  // namespace glit
