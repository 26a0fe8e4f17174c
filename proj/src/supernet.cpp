#include "glit/supernet.hpp"

#include <algorithm>
#include <numeric>

#include "glit/errors.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

// Slices shared parameters and, when asked, marks the elements it reads.
class Slicer {
 public:
  Slicer(const std::unordered_map<const void*, std::size_t>& index, const ParamList& params,
         std::vector<SliceMask>* masks)
      : index_(index), params_(params), masks_(masks) {}

  Tensor whole(const Tensor& p) {
    if (!p.defined()) return p;
    mark(p, 0, p.rank() == 2 ? p.dim(0) : 1, 0, p.rank() == 2 ? p.dim(1) : p.numel());
    return p;
  }

  Tensor rect(const Tensor& p, std::size_t r0, std::size_t rows, std::size_t c0,
              std::size_t cols) {
    mark(p, r0, rows, c0, cols);
    if (r0 == 0 && c0 == 0 && rows == p.dim(0) && cols == p.dim(1)) return p;
    return slice(p, r0, rows, c0, cols);
  }

  Tensor span1d(const Tensor& p, std::size_t start, std::size_t count) {
    mark(p, 0, 1, start, count);
    if (start == 0 && count == p.numel()) return p;
    return slice1d(p, start, count);
  }

 private:
  void mark(const Tensor& p, std::size_t r0, std::size_t rows, std::size_t c0, std::size_t cols) {
    if (masks_ == nullptr) return;
    SliceMask& m = (*masks_)[index_.at(p.node().get())];
    const std::size_t width = p.rank() == 2 ? p.dim(1) : p.numel();
    for (std::size_t r = r0; r < r0 + rows; ++r)
      for (std::size_t c = c0; c < c0 + cols; ++c) m[r * width + c] = 1;
  }

  const std::unordered_map<const void*, std::size_t>& index_;
  const ParamList& params_;
  std::vector<SliceMask>* masks_;
};

}  // namespace

std::size_t PathSample::touched() const {
  std::size_t n = 0;
  for (const auto& m : masks) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
  return n;
}

BlockCapacity block_capacity(const SearchSpaceSpec& spec, std::size_t block) {
  BlockCapacity cap;
  for (const auto& [g, l] : gl_choices(spec, block)) {
    const BlockChoices c = block_choices(spec, block, g, l);
    for (int dz : c.ffn_ratios) cap.ffn_ratio = std::max(cap.ffn_ratio, dz);
    if (g > 0) {
      for (int dk : c.qkv_dims) {
        if (dk % spec.num_heads != 0) {
          throw ConfigError("d_k=" + std::to_string(dk) + " is not divisible by N=" +
                            std::to_string(spec.num_heads));
        }
        cap.global_width = std::max(cap.global_width, sz(g) * sz(dk / spec.num_heads));
      }
    }
    if (l > 0) {
      cap.local_heads = std::max(cap.local_heads, l);
      for (int e : c.expansions) cap.expansion = std::max(cap.expansion, e);
      for (int k : c.kernels) cap.kernel = std::max(cap.kernel, k);
    }
  }
  return cap;
}

Supernet Supernet::build(const ModelConfig& cfg, const SearchSpaceSpec& space, Rng& rng) {
  cfg.check();
  space.check();
  if (cfg.num_blocks != space.num_blocks || cfg.num_heads != space.num_heads) {
    throw ConfigError("model has M=" + std::to_string(cfg.num_blocks) + ", N=" +
                      std::to_string(cfg.num_heads) + " but the space has M=" +
                      std::to_string(space.num_blocks) + ", N=" + std::to_string(space.num_heads));
  }
  Supernet sn;
  sn.config_ = cfg;
  sn.space_ = space;
  auto z = [](Shape s) { return Tensor::zeros(std::move(s), true); };
  const std::size_t d = sz(cfg.embed_dim), dl = d / sz(cfg.num_heads);

  sn.embed_.proj_w = z({cfg.image.token_dim(), d});
  sn.embed_.proj_b = z({d});
  sn.embed_.class_token = z({d});
  if (cfg.use_pos_emb) sn.embed_.pos_emb = z({cfg.image.num_tokens(), d});

  for (int m = 0; m < space.num_blocks; ++m) {
    const BlockCapacity cap = block_capacity(space, sz(m));
    sn.capacity_.push_back(cap);
    SupernetBlock b;
    b.ln1_g = z({d});
    b.ln1_b = z({d});
    if (cap.global_width > 0) {
      const std::size_t gw = cap.global_width;
      b.q_w = z({d, gw});
      b.q_b = z({gw});
      b.k_w = z({d, gw});
      b.k_b = z({gw});
      b.v_w = z({d, gw});
      b.v_b = z({gw});
    }
    const std::size_t inner = sz(cap.expansion) * dl;
    for (int j = 0; j < cap.local_heads; ++j) {
      ConvHeadWeights c;
      c.pw1_w = z({d, 2 * inner});
      c.pw1_b = z({2 * inner});
      c.norm1_g = z({2 * inner});
      c.norm1_b = z({2 * inner});
      c.dw_w = z({inner, sz(cap.kernel)});
      c.norm2_g = z({inner});
      c.norm2_b = z({inner});
      c.pw2_w = z({inner, dl});
      c.pw2_b = z({dl});
      b.conv.push_back(std::move(c));
    }
    if (cap.global_width > 0) b.proj_global_w = z({cap.global_width, d});
    if (cap.local_heads > 0) b.proj_local_w = z({sz(cap.local_heads) * dl, d});
    b.proj_b = z({d});
    b.ln2_g = z({d});
    b.ln2_b = z({d});
    const std::size_t hidden = sz(cap.ffn_ratio) * d;
    b.fc1_w = z({d, hidden});
    b.fc1_b = z({hidden});
    b.fc2_w = z({hidden, d});
    b.fc2_b = z({d});
    sn.blocks_.push_back(std::move(b));
  }
  sn.head_w_ = z({d, sz(cfg.num_classes)});
  sn.head_b_ = z({sz(cfg.num_classes)});
  sn.index_params();
  for (auto& p : sn.params_) init_param(p.name, p.tensor, rng);
  return sn;
}

void Supernet::index_params() {
  params_.clear();
  index_.clear();
  auto add = [this](std::string name, const Tensor& t) {
    if (!t.defined()) return;
    index_[t.node().get()] = params_.size();
    params_.push_back({std::move(name), t});
  };
  add("patch.proj_w", embed_.proj_w);
  add("patch.proj_b", embed_.proj_b);
  add("class_token", embed_.class_token);
  add("pos_emb", embed_.pos_emb);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const SupernetBlock& b = blocks_[i];
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
    add(p + "proj_global_w", b.proj_global_w);
    add(p + "proj_local_w", b.proj_local_w);
    add(p + "proj_b", b.proj_b);
    add(p + "ln2_g", b.ln2_g);
    add(p + "ln2_b", b.ln2_b);
    add(p + "fc1_w", b.fc1_w);
    add(p + "fc1_b", b.fc1_b);
    add(p + "fc2_w", b.fc2_w);
    add(p + "fc2_b", b.fc2_b);
  }
  add("head_w", head_w_);
  add("head_b", head_b_);
}

ModelWeights Supernet::slice_path(const Genotype& g, std::vector<SliceMask>* masks) const {
  require_valid(g, space_);
  if (masks != nullptr) {
    masks->clear();
    for (const auto& p : params_) masks->emplace_back(p.tensor.numel(), 0);
  }
  Slicer s(index_, params_, masks);
  const std::size_t d = sz(config_.embed_dim);

  ModelWeights w;
  w.embed.proj_w = s.whole(embed_.proj_w);
  w.embed.proj_b = s.whole(embed_.proj_b);
  w.embed.class_token = s.whole(embed_.class_token);
  w.embed.pos_emb = s.whole(embed_.pos_emb);

  for (std::size_t m = 0; m < blocks_.size(); ++m) {
    const SupernetBlock& sb = blocks_[m];
    const BlockConfig bc =
        BlockConfig::from_gene(g.blocks[m], config_.num_heads, config_.embed_dim, config_.dropout);
    const std::size_t gw = bc.global_width(), dl = bc.local_dim(), inner = bc.conv_inner();
    BlockWeights b;
    b.ln1_g = s.whole(sb.ln1_g);
    b.ln1_b = s.whole(sb.ln1_b);
    std::vector<Tensor> proj_parts;
    if (bc.global_heads > 0) {
      b.q_w = s.rect(sb.q_w, 0, d, 0, gw);
      b.q_b = s.span1d(sb.q_b, 0, gw);
      b.k_w = s.rect(sb.k_w, 0, d, 0, gw);
      b.k_b = s.span1d(sb.k_b, 0, gw);
      b.v_w = s.rect(sb.v_w, 0, d, 0, gw);
      b.v_b = s.span1d(sb.v_b, 0, gw);
      proj_parts.push_back(s.rect(sb.proj_global_w, 0, gw, 0, d));
    }
    for (int j = 0; j < bc.local_heads; ++j) {
      const ConvHeadWeights& sc = sb.conv[sz(j)];
      const std::size_t inner_max = sc.dw_w.dim(0), taps_max = sc.dw_w.dim(1);
      const std::size_t tap0 = (taps_max - sz(bc.kernel)) / 2;
      ConvHeadWeights c;
      if (inner == inner_max) {
        c.pw1_w = s.whole(sc.pw1_w);
        c.pw1_b = s.whole(sc.pw1_b);
        c.norm1_g = s.whole(sc.norm1_g);
        c.norm1_b = s.whole(sc.norm1_b);
      } else {
        // Value and gate halves are sliced separately so both stay aligned.
        c.pw1_w = concat_cols({s.rect(sc.pw1_w, 0, d, 0, inner),
                               s.rect(sc.pw1_w, 0, d, inner_max, inner)});
        c.pw1_b = concat1d({s.span1d(sc.pw1_b, 0, inner), s.span1d(sc.pw1_b, inner_max, inner)});
        c.norm1_g =
            concat1d({s.span1d(sc.norm1_g, 0, inner), s.span1d(sc.norm1_g, inner_max, inner)});
        c.norm1_b =
            concat1d({s.span1d(sc.norm1_b, 0, inner), s.span1d(sc.norm1_b, inner_max, inner)});
      }
      c.dw_w = s.rect(sc.dw_w, 0, inner, tap0, sz(bc.kernel));
      c.norm2_g = s.span1d(sc.norm2_g, 0, inner);
      c.norm2_b = s.span1d(sc.norm2_b, 0, inner);
      c.pw2_w = s.rect(sc.pw2_w, 0, inner, 0, dl);
      c.pw2_b = s.whole(sc.pw2_b);
      b.conv.push_back(std::move(c));
    }
    if (bc.local_heads > 0) proj_parts.push_back(s.rect(sb.proj_local_w, 0, bc.local_width(), 0, d));
    b.proj_w = proj_parts.size() == 1 ? proj_parts.front() : concat_rows(proj_parts);
    b.proj_b = s.whole(sb.proj_b);
    b.ln2_g = s.whole(sb.ln2_g);
    b.ln2_b = s.whole(sb.ln2_b);
    const std::size_t hidden = bc.ffn_hidden();
    b.fc1_w = s.rect(sb.fc1_w, 0, d, 0, hidden);
    b.fc1_b = s.span1d(sb.fc1_b, 0, hidden);
    b.fc2_w = s.rect(sb.fc2_w, 0, hidden, 0, d);
    b.fc2_b = s.whole(sb.fc2_b);
    w.blocks.push_back(std::move(b));
  }
  w.head_w = s.whole(head_w_);
  w.head_b = s.whole(head_b_);
  return w;
}

ModelWeights Supernet::path_weights(const Genotype& g) const { return slice_path(g, nullptr); }

PathSample Supernet::plan(const Genotype& g) const {
  PathSample ps;
  ps.genotype = g;
  NoGradGuard no_grad;
  slice_path(g, &ps.masks);
  return ps;
}

Tensor Supernet::forward_path(const Genotype& g, const Tensor& patches, bool training,
                              Rng* rng) const {
  return forward_logits(path_weights(g), config_, g, patches, {0, training, rng});
}

GlitModel Supernet::extract(const Genotype& g) const {
  NoGradGuard no_grad;
  return GlitModel::from_weights(config_, g, path_weights(g));
}

void Supernet::load(const ParamList& values) {
  if (values.size() != params_.size()) {
    throw DimensionError("supernet has " + std::to_string(params_.size()) + " tensors, got " +
                         std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].name != params_[i].name ||
        values[i].tensor.shape() != params_[i].tensor.shape()) {
      throw DimensionError("tensor " + values[i].name + " " + shape_str(values[i].tensor.shape()) +
                           " does not fit " + params_[i].name + " " +
                           shape_str(params_[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto src = values[i].tensor.data();
    std::copy(src.begin(), src.end(), params_[i].tensor.mutable_data().begin());
  }
}

}  // namespace glit
