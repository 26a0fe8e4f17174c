#include "glit/model.hpp"

#include <sstream>

#include "glit/errors.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace {

constexpr double kInitStd = 0.02;

bool ends_with(const std::string& s, const char* suffix) {
  const std::string suf(suffix);
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

}  // namespace

void ModelConfig::check() const {
  image.check();
  if (embed_dim < 1 || num_heads < 1 || num_blocks < 1 || num_classes < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("embed dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::string ModelConfig::to_string() const {
  std::ostringstream os;
  os << "c=" << image.channels << ";w=" << image.width << ";h=" << image.height
     << ";m=" << image.grid << ";d=" << embed_dim << ";N=" << num_heads << ";M=" << num_blocks
     << ";C=" << num_classes << ";dropout=" << dropout << ";pos=" << (use_pos_emb ? 1 : 0);
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("model config item '" + item + "' lacks '='");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "c") cfg.image.channels = std::stoi(value);
      else if (key == "w") cfg.image.width = std::stoi(value);
      else if (key == "h") cfg.image.height = std::stoi(value);
      else if (key == "m") cfg.image.grid = std::stoi(value);
      else if (key == "d") cfg.embed_dim = std::stoi(value);
      else if (key == "N") cfg.num_heads = std::stoi(value);
      else if (key == "M") cfg.num_blocks = std::stoi(value);
      else if (key == "C") cfg.num_classes = std::stoi(value);
      else if (key == "dropout") cfg.dropout = std::stod(value);
      else if (key == "pos") cfg.use_pos_emb = std::stoi(value) != 0;
      else throw FormatError("unknown model config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError("bad value '" + value + "' for model config key '" + key + "'");
    }
  }
  cfg.check();
  return cfg;
}

std::size_t count_scalars(const ParamList& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

ParamList named_params(const ModelWeights& w) {
  ParamList out;
  auto add = [&out](std::string name, const Tensor& t) {
    if (t.defined()) out.push_back({std::move(name), t});
  };
  add("patch.proj_w", w.embed.proj_w);
  add("patch.proj_b", w.embed.proj_b);
  add("class_token", w.embed.class_token);
  add("pos_emb", w.embed.pos_emb);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const BlockWeights& b = w.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    add(p + "ln1_g", b.ln1_g);
    add(p + "ln1_b", b.ln1_b);
    add(p + "q_w", b.q_w);
    add(p + "q_b", b.q_b);
    add(p + "k_w", b.k_w);
    add(p + "k_b", b.k_b);
    add(p + "v_w", b.v_w);
    add(p + "v_b", b.v_b);
    for (std::size_t j = 0; j < b.conv.size(); ++j) {
      const ConvHeadWeights& c = b.conv[j];
      const std::string cp = p + "conv." + std::to_string(j) + ".";
      add(cp + "pw1_w", c.pw1_w);
      add(cp + "pw1_b", c.pw1_b);
      add(cp + "norm1_g", c.norm1_g);
      add(cp + "norm1_b", c.norm1_b);
      add(cp + "dw_w", c.dw_w);
      add(cp + "norm2_g", c.norm2_g);
      add(cp + "norm2_b", c.norm2_b);
      add(cp + "pw2_w", c.pw2_w);
      add(cp + "pw2_b", c.pw2_b);
    }
    add(p + "proj_w", b.proj_w);
    add(p + "proj_b", b.proj_b);
    add(p + "ln2_g", b.ln2_g);
    add(p + "ln2_b", b.ln2_b);
    add(p + "fc1_w", b.fc1_w);
    add(p + "fc1_b", b.fc1_b);
    add(p + "fc2_w", b.fc2_w);
    add(p + "fc2_b", b.fc2_b);
  }
  add("head_w", w.head_w);
  add("head_b", w.head_b);
  return out;
}

ModelWeights allocate_weights(const ModelConfig& cfg, const Genotype& g, bool requires_grad) {
  cfg.check();
  if (static_cast<int>(g.num_blocks()) != cfg.num_blocks) {
    throw ConfigError("genotype has " + std::to_string(g.num_blocks()) + " blocks, model has " +
                      std::to_string(cfg.num_blocks));
  }
  auto z = [requires_grad](Shape s) { return Tensor::zeros(std::move(s), requires_grad); };
  const std::size_t d = sz(cfg.embed_dim);
  ModelWeights w;
  w.embed.proj_w = z({cfg.image.token_dim(), d});
  w.embed.proj_b = z({d});
  w.embed.class_token = z({d});
  if (cfg.use_pos_emb) w.embed.pos_emb = z({cfg.image.num_tokens(), d});
  for (const BlockGene& gene : g.blocks) {
    const BlockConfig bc = BlockConfig::from_gene(gene, cfg.num_heads, cfg.embed_dim, cfg.dropout);
    bc.check();
    BlockWeights b;
    b.ln1_g = z({d});
    b.ln1_b = z({d});
    if (bc.global_heads > 0) {
      const std::size_t gw = bc.global_width();
      b.q_w = z({d, gw});
      b.q_b = z({gw});
      b.k_w = z({d, gw});
      b.k_b = z({gw});
      b.v_w = z({d, gw});
      b.v_b = z({gw});
    }
    const std::size_t inner = bc.conv_inner(), dl = bc.local_dim();
    for (int j = 0; j < bc.local_heads; ++j) {
      ConvHeadWeights c;
      c.pw1_w = z({d, 2 * inner});
      c.pw1_b = z({2 * inner});
      c.norm1_g = z({2 * inner});
      c.norm1_b = z({2 * inner});
      c.dw_w = z({inner, sz(bc.kernel)});
      c.norm2_g = z({inner});
      c.norm2_b = z({inner});
      c.pw2_w = z({inner, dl});
      c.pw2_b = z({dl});
      b.conv.push_back(std::move(c));
    }
    b.proj_w = z({bc.global_width() + bc.local_width(), d});
    b.proj_b = z({d});
    b.ln2_g = z({d});
    b.ln2_b = z({d});
    b.fc1_w = z({d, bc.ffn_hidden()});
    b.fc1_b = z({bc.ffn_hidden()});
    b.fc2_w = z({bc.ffn_hidden(), d});
    b.fc2_b = z({d});
    w.blocks.push_back(std::move(b));
  }
  w.head_w = z({d, sz(cfg.num_classes)});
  w.head_b = z({sz(cfg.num_classes)});
  return w;
}

void init_param(const std::string& name, Tensor& t, Rng& rng) {
  auto data = t.mutable_data();
  if (ends_with(name, "_g")) {
    std::fill(data.begin(), data.end(), 1.0);
  } else if (ends_with(name, "_b") || name == "class_token") {
    std::fill(data.begin(), data.end(), 0.0);
  } else {
    for (double& v : data) v = rng.truncated_normal(kInitStd);
  }
}

TokenSequence forward_tokens(const ModelWeights& w, const ModelConfig& cfg, const Genotype& g,
                             const Tensor& patches, const ForwardContext& ctx_in) {
  if (w.blocks.size() != g.num_blocks()) {
    throw DimensionError("weights have " + std::to_string(w.blocks.size()) +
                         " blocks, genotype has " + std::to_string(g.num_blocks()));
  }
  TokenSequence seq = embed(patches, w.embed, cfg.image.num_patches());
  ForwardContext ctx = ctx_in;
  ctx.seq_len = seq.seq_len;
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const BlockConfig bc =
        BlockConfig::from_gene(g.blocks[i], cfg.num_heads, cfg.embed_dim, cfg.dropout);
    seq.tokens = block_forward(seq.tokens, bc, w.blocks[i], ctx);
  }
  return seq;
}

Tensor forward_logits(const ModelWeights& w, const ModelConfig& cfg, const Genotype& g,
                      const Tensor& patches, const ForwardContext& ctx) {
  return classify(forward_tokens(w, cfg, g, patches, ctx), w.head_w, w.head_b);
}

GlitModel GlitModel::init(const ModelConfig& cfg, const Genotype& g, Rng& rng) {
  ModelWeights w = allocate_weights(cfg, g, true);
  for (auto& p : named_params(w)) init_param(p.name, p.tensor, rng);
  return GlitModel(cfg, g, std::move(w));
}

GlitModel GlitModel::zeros(const ModelConfig& cfg, const Genotype& g) {
  return GlitModel(cfg, g, allocate_weights(cfg, g, true));
}

GlitModel GlitModel::from_weights(const ModelConfig& cfg, const Genotype& g,
                                  const ModelWeights& src) {
  ModelWeights w = allocate_weights(cfg, g, true);
  const ParamList from = named_params(src);
  ParamList to = named_params(w);
  if (from.size() != to.size()) {
    throw DimensionError("weight bundle has " + std::to_string(from.size()) +
                         " tensors, genotype needs " + std::to_string(to.size()));
  }
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor.shape() != to[i].tensor.shape()) {
      throw DimensionError("tensor " + from[i].name + " " + shape_str(from[i].tensor.shape()) +
                           " does not fit " + to[i].name + " " + shape_str(to[i].tensor.shape()));
    }
    const auto src_data = from[i].tensor.data();
    std::copy(src_data.begin(), src_data.end(), to[i].tensor.mutable_data().begin());
  }
  return GlitModel(cfg, g, std::move(w));
}

Tensor GlitModel::forward(const Tensor& patches, bool training, Rng* rng) const {
  return forward_logits(weights_, config_, genotype_, patches, {0, training, rng});
}

TokenSequence GlitModel::forward_tokens(const Tensor& patches) const {
  return glit::forward_tokens(weights_, config_, genotype_, patches, {});
}

}  // namespace glit
