#include "glit/search_space.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <tuple>

#include "glit/errors.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace {

// Fields that matter for a block; ignored ones collapse to 0.
std::tuple<int, int, int, int, int, int> active_fields(const BlockGene& b) {
  return {b.global_heads,
          b.local_heads,
          b.has_global() ? b.qkv_dim : 0,
          b.ffn_ratio,
          b.has_local() ? b.expansion : 0,
          b.has_local() ? b.kernel : 0};
}

bool contains(const std::vector<int>& list, int value) {
  return std::find(list.begin(), list.end(), value) != list.end();
}

std::string join(const std::vector<int>& list) {
  std::string out;
  for (std::size_t i = 0; i < list.size(); ++i) out += (i ? "," : "") + std::to_string(list[i]);
  return out;
}

int parse_int(std::string_view text, const std::string& context) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError("cannot parse integer '" + std::string(text) + "' in " + context);
  }
  return value;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::vector<int> parse_list(const std::string& text, const std::string& context) {
  std::vector<int> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_int(part, context));
  return out;
}

std::size_t index_of(const std::vector<int>& list, int value) {
  return static_cast<std::size_t>(std::find(list.begin(), list.end(), value) - list.begin());
}

}  // namespace

bool operator==(const BlockGene& a, const BlockGene& b) {
  return active_fields(a) == active_fields(b);
}

bool operator<(const BlockGene& a, const BlockGene& b) {
  return active_fields(a) < active_fields(b);
}

std::string Genotype::to_string() const {
  std::ostringstream os;
  os << blocks.size() << ';';
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockGene& b = blocks[i];
    os << (i ? "|" : "") << '(' << b.global_heads << ',' << b.local_heads << ',' << b.qkv_dim
       << ',' << b.ffn_ratio << ',' << b.expansion << ',' << b.kernel << ')';
  }
  return os.str();
}

Genotype Genotype::parse(const std::string& raw) {
  std::string text = raw;
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) {
    text.pop_back();
  }
  const auto semi = text.find(';');
  if (semi == std::string::npos) throw FormatError("genotype '" + text + "' lacks 'M;' prefix");
  const int m = parse_int(std::string_view(text).substr(0, semi), "genotype block count");
  Genotype g;
  const std::string body = text.substr(semi + 1);
  if (m == 0) {
    if (!body.empty()) throw FormatError("genotype '" + text + "' declares 0 blocks");
    return g;
  }
  for (const auto& part : split(body, '|')) {
    if (part.size() < 2 || part.front() != '(' || part.back() != ')') {
      throw FormatError("malformed block '" + part + "' in genotype '" + text + "'");
    }
    const auto fields = parse_list(part.substr(1, part.size() - 2), "genotype block");
    if (fields.size() != 6) {
      throw FormatError("block '" + part + "' needs 6 fields (G,L,dk,dz,E,K)");
    }
    g.blocks.push_back({fields[0], fields[1], fields[2], fields[3], fields[4], fields[5]});
  }
  if (static_cast<int>(g.blocks.size()) != m) {
    throw FormatError("genotype '" + text + "' declares " + std::to_string(m) + " blocks but has " +
                      std::to_string(g.blocks.size()));
  }
  return g;
}

std::size_t GenotypeHash::operator()(const Genotype& g) const {
  std::size_t h = 0x9e3779b97f4a7c15ULL;
  auto mix = [&h](int v) {
    h ^= std::hash<int>()(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  };
  for (const BlockGene& b : g.blocks) {
    std::apply([&](auto... f) { (mix(f), ...); }, active_fields(b));
  }
  return h;
}

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::kJoint: return "joint";
    case Stage::kHigh: return "high";
    case Stage::kLow: return "low";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "joint") return Stage::kJoint;
  if (name == "high") return Stage::kHigh;
  if (name == "low") return Stage::kLow;
  throw ConfigError("unknown search stage '" + name + "'");
}

SearchSpaceSpec SearchSpaceSpec::table2() { return SearchSpaceSpec{}; }

void SearchSpaceSpec::check() const {
  if (num_blocks < 1) throw ConfigError("search space needs at least one block");
  if (num_heads < 1) throw ConfigError("search space needs at least one head per block");
  const std::pair<const char*, const std::vector<int>*> lists[] = {
      {"d_k", &qkv_dims}, {"d_z", &ffn_ratios}, {"E", &expansions}, {"K", &kernels}};
  for (const auto& [name, list] : lists) {
    if (list->empty()) throw ConfigError(std::string("choice list for ") + name + " is empty");
    for (int v : *list) {
      if (v < 1) throw ConfigError(std::string("choice for ") + name + " must be positive");
    }
  }
  for (int k : kernels) {
    if (k % 2 == 0) throw ConfigError("kernel choices must be odd, got " + std::to_string(k));
  }
  // Defaults must be choices so stage-1 genotypes lie inside the joint space.
  const std::pair<int, const std::vector<int>*> picks[] = {{defaults.qkv_dim, &qkv_dims},
                                                           {defaults.ffn_ratio, &ffn_ratios},
                                                           {defaults.expansion, &expansions},
                                                           {defaults.kernel, &kernels}};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& [v, list] = picks[i];
    if (std::find(list->begin(), list->end(), v) == list->end()) {
      throw ConfigError(std::string("default ") + lists[i].first + "=" + std::to_string(v) +
                        " is not one of its choices");
    }
  }
  if (stage == Stage::kLow) {
    if (static_cast<int>(fixed_high.size()) != num_blocks) {
      throw ConfigError("low-level stage needs a fixed (G,L) for every block");
    }
    for (const auto& [g, l] : fixed_high) {
      if (g < 0 || l < 0 || g + l != num_heads) {
        throw ConfigError("fixed (G,L)=(" + std::to_string(g) + "," + std::to_string(l) +
                          ") does not sum to N=" + std::to_string(num_heads));
      }
    }
  }
}

std::string SearchSpaceSpec::to_string() const {
  std::ostringstream os;
  os << "M=" << num_blocks << ";N=" << num_heads << ";dk=" << join(qkv_dims)
     << ";dz=" << join(ffn_ratios) << ";E=" << join(expansions) << ";K=" << join(kernels)
     << ";stage=" << stage_name(stage) << ";defaults=" << defaults.qkv_dim << ','
     << defaults.ffn_ratio << ',' << defaults.expansion << ',' << defaults.kernel;
  if (stage == Stage::kLow) {
    os << ";high=";
    for (std::size_t i = 0; i < fixed_high.size(); ++i) {
      os << (i ? "|" : "") << fixed_high[i].first << ',' << fixed_high[i].second;
    }
  }
  return os.str();
}

SearchSpaceSpec SearchSpaceSpec::parse(const std::string& text) {
  SearchSpaceSpec spec;
  for (const auto& item : split(text, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("search space item '" + item + "' lacks '='");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "M") spec.num_blocks = parse_int(value, key);
    else if (key == "N") spec.num_heads = parse_int(value, key);
    else if (key == "dk") spec.qkv_dims = parse_list(value, key);
    else if (key == "dz") spec.ffn_ratios = parse_list(value, key);
    else if (key == "E") spec.expansions = parse_list(value, key);
    else if (key == "K") spec.kernels = parse_list(value, key);
    else if (key == "stage") spec.stage = parse_stage(value);
    else if (key == "defaults") {
      const auto d = parse_list(value, key);
      if (d.size() != 4) throw FormatError("defaults need 4 values (dk,dz,E,K)");
      spec.defaults = {d[0], d[1], d[2], d[3]};
    } else if (key == "high") {
      spec.fixed_high.clear();
      for (const auto& pair : split(value, '|')) {
        const auto gl = parse_list(pair, key);
        if (gl.size() != 2) throw FormatError("high-level entry '" + pair + "' needs G,L");
        spec.fixed_high.emplace_back(gl[0], gl[1]);
      }
    } else {
      throw FormatError("unknown search space key '" + key + "'");
    }
  }
  spec.check();
  return spec;
}

std::vector<std::pair<int, int>> gl_choices(const SearchSpaceSpec& spec, std::size_t block) {
  if (spec.stage == Stage::kLow) return {spec.fixed_high.at(block)};
  std::vector<std::pair<int, int>> out;
  for (int g = 0; g <= spec.num_heads; ++g) out.emplace_back(g, spec.num_heads - g);
  return out;
}

BlockChoices block_choices(const SearchSpaceSpec& spec, std::size_t block, int global_heads,
                           int local_heads) {
  BlockChoices c;
  c.gl = gl_choices(spec, block);
  const LowLevelDefaults& def = spec.defaults;
  switch (spec.stage) {
    case Stage::kJoint:
      c.qkv_dims = spec.qkv_dims;
      c.ffn_ratios = spec.ffn_ratios;
      c.expansions = spec.expansions;
      c.kernels = spec.kernels;
      break;
    case Stage::kHigh:
      c.qkv_dims = {def.qkv_dim};
      c.ffn_ratios = {def.ffn_ratio};
      c.expansions = {def.expansion};
      c.kernels = {def.kernel};
      break;
    case Stage::kLow: {
      const bool global = global_heads > 0, local = local_heads > 0;
      c.ffn_ratios = spec.ffn_ratios;
      if (global && local) {
        c.qkv_dims = {def.qkv_dim};
        c.expansions = spec.expansions;
        c.kernels = {def.kernel};
      } else if (global) {
        c.qkv_dims = spec.qkv_dims;
        c.expansions = {spec.expansions.front()};
        c.kernels = {spec.kernels.front()};
      } else {
        c.qkv_dims = {spec.qkv_dims.front()};
        c.expansions = spec.expansions;
        c.kernels = spec.kernels;
      }
      break;
    }
  }
  return c;
}

Genotype canonicalize(Genotype g, const SearchSpaceSpec& spec) {
  for (BlockGene& b : g.blocks) {
    if (!b.has_global()) b.qkv_dim = spec.qkv_dims.front();
    if (!b.has_local()) {
      b.expansion = spec.expansions.front();
      b.kernel = spec.kernels.front();
    }
  }
  return g;
}

namespace {

// Raw (un-canonicalized) candidates of one block, in enumeration order.
std::vector<BlockGene> block_candidates(const SearchSpaceSpec& spec, std::size_t block) {
  std::vector<BlockGene> out;
  for (const auto& [g, l] : gl_choices(spec, block)) {
    const BlockChoices c = block_choices(spec, block, g, l);
    for (int dk : c.qkv_dims)
      for (int dz : c.ffn_ratios)
        for (int e : c.expansions)
          for (int k : c.kernels) out.push_back({g, l, dk, dz, e, k});
  }
  return out;
}

}  // namespace

BigInt space_size(const SearchSpaceSpec& spec) {
  spec.check();
  BigInt total = 1;
  for (int m = 0; m < spec.num_blocks; ++m) {
    BigInt per_block = 0;
    for (const auto& [g, l] : gl_choices(spec, static_cast<std::size_t>(m))) {
      const BlockChoices c = block_choices(spec, static_cast<std::size_t>(m), g, l);
      per_block += BigInt(c.qkv_dims.size()) * c.ffn_ratios.size() * c.expansions.size() *
                   c.kernels.size();
    }
    total *= per_block;
  }
  return total;
}

BigInt hierarchical_size(const SearchSpaceSpec& spec) {
  const BigInt low_block = BigInt(spec.qkv_dims.size()) * spec.ffn_ratios.size() *
                           spec.expansions.size() * spec.kernels.size();
  const auto m = static_cast<unsigned>(spec.num_blocks);
  return boost::multiprecision::pow(BigInt(spec.num_heads + 1), m) +
         boost::multiprecision::pow(low_block, m);
}

void enumerate(const SearchSpaceSpec& spec, const std::function<bool(const Genotype&)>& visit) {
  spec.check();
  std::vector<std::vector<BlockGene>> per_block;
  for (int m = 0; m < spec.num_blocks; ++m) {
    per_block.push_back(block_candidates(spec, static_cast<std::size_t>(m)));
  }
  std::vector<std::size_t> idx(per_block.size(), 0);
  Genotype g;
  g.blocks.resize(per_block.size());
  for (;;) {
    for (std::size_t m = 0; m < per_block.size(); ++m) g.blocks[m] = per_block[m][idx[m]];
    if (!visit(canonicalize(g, spec))) return;
    // Odometer, last block fastest.
    std::size_t m = per_block.size();
    while (m > 0) {
      --m;
      if (++idx[m] < per_block[m].size()) break;
      idx[m] = 0;
      if (m == 0) return;
    }
  }
}

std::vector<Genotype> enumerate_all(const SearchSpaceSpec& spec) {
  std::vector<Genotype> out;
  enumerate(spec, [&out](const Genotype& g) {
    out.push_back(g);
    return true;
  });
  return out;
}

Genotype sample_uniform(const SearchSpaceSpec& spec, Rng& rng) {
  auto pick = [&rng](const auto& list) {
    return list.size() == 1 ? list.front() : list[rng.index(list.size())];
  };
  Genotype g;
  for (int m = 0; m < spec.num_blocks; ++m) {
    const auto [gh, lh] = pick(gl_choices(spec, static_cast<std::size_t>(m)));
    const BlockChoices c = block_choices(spec, static_cast<std::size_t>(m), gh, lh);
    BlockGene b{gh, lh, 0, 0, 0, 0};
    b.qkv_dim = pick(c.qkv_dims);
    b.ffn_ratio = pick(c.ffn_ratios);
    b.expansion = pick(c.expansions);
    b.kernel = pick(c.kernels);
    g.blocks.push_back(b);
  }
  return canonicalize(std::move(g), spec);
}

SearchSpaceSpec reduce_for_stage2(const std::vector<std::pair<int, int>>& high_star,
                                  const SearchSpaceSpec& spec) {
  SearchSpaceSpec out = spec;
  out.stage = Stage::kLow;
  out.fixed_high = high_star;
  out.check();
  return out;
}

SearchSpaceSpec reduce_for_stage2(const Genotype& high_star, const SearchSpaceSpec& spec) {
  std::vector<std::pair<int, int>> gl;
  for (const BlockGene& b : high_star.blocks) gl.emplace_back(b.global_heads, b.local_heads);
  return reduce_for_stage2(gl, spec);
}

SearchSpaceSpec stage1_space(const SearchSpaceSpec& spec) {
  SearchSpaceSpec out = spec;
  out.stage = Stage::kHigh;
  out.fixed_high.clear();
  out.check();
  return out;
}

std::vector<Violation> validate(const Genotype& g, const SearchSpaceSpec& spec) {
  std::vector<Violation> out;
  if (static_cast<int>(g.blocks.size()) != spec.num_blocks) {
    out.push_back({-1, "M",
                   "genotype has " + std::to_string(g.blocks.size()) + " blocks, space expects " +
                       std::to_string(spec.num_blocks)});
  }
  for (std::size_t m = 0; m < g.blocks.size(); ++m) {
    const BlockGene& b = g.blocks[m];
    const int block = static_cast<int>(m);
    auto add = [&](const char* axis, std::string msg) { out.push_back({block, axis, std::move(msg)}); };
    if (b.global_heads < 0 || b.local_heads < 0) add("G,L", "head counts must be non-negative");
    if (b.global_heads + b.local_heads != spec.num_heads) {
      add("G,L", "G+L=" + std::to_string(b.global_heads + b.local_heads) + " but N=" +
                     std::to_string(spec.num_heads));
    }
    if (b.has_global() && b.qkv_dim % spec.num_heads != 0) {
      add("d_k", "d_k=" + std::to_string(b.qkv_dim) + " is not divisible by N=" +
                     std::to_string(spec.num_heads));
    }
    if (b.has_local() && b.kernel % 2 == 0) {
      add("K", "kernel must be odd, got " + std::to_string(b.kernel));
    }
    if (b.has_local() && b.expansion < 1) add("E", "expansion ratio must be >= 1");
    if (b.ffn_ratio < 1) add("d_z", "FFN ratio must be >= 1");
    if (static_cast<int>(m) >= spec.num_blocks) continue;

    const auto gls = gl_choices(spec, m);
    if (std::find(gls.begin(), gls.end(), std::make_pair(b.global_heads, b.local_heads)) ==
        gls.end()) {
      add("G,L", "(G,L)=(" + std::to_string(b.global_heads) + "," +
                     std::to_string(b.local_heads) + ") is not a legal choice");
    }
    const BlockChoices c = block_choices(spec, m, b.global_heads, b.local_heads);
    if (b.has_global() && !contains(c.qkv_dims, b.qkv_dim))
      add("d_k", "d_k=" + std::to_string(b.qkv_dim) + " not in {" + join(c.qkv_dims) + "}");
    if (!contains(c.ffn_ratios, b.ffn_ratio))
      add("d_z", "d_z=" + std::to_string(b.ffn_ratio) + " not in {" + join(c.ffn_ratios) + "}");
    if (b.has_local() && !contains(c.expansions, b.expansion))
      add("E", "E=" + std::to_string(b.expansion) + " not in {" + join(c.expansions) + "}");
    if (b.has_local() && !contains(c.kernels, b.kernel))
      add("K", "K=" + std::to_string(b.kernel) + " not in {" + join(c.kernels) + "}");
  }
  return out;
}

std::string format_violations(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    const Violation& v = violations[i];
    os << (i ? "; " : "");
    if (v.block >= 0) os << "block " << v.block << ' ';
    os << v.axis << ": " << v.message;
  }
  return os.str();
}

void require_valid(const Genotype& g, const SearchSpaceSpec& spec) {
  const auto violations = validate(g, spec);
  if (!violations.empty()) {
    throw ValidationError("invalid genotype " + g.to_string() + ": " +
                          format_violations(violations));
  }
}

std::vector<std::uint8_t> encode_indices(const Genotype& g, const SearchSpaceSpec& spec) {
  require_valid(g, spec);
  const Genotype c = canonicalize(g, spec);
  std::vector<std::uint8_t> code{kGenotypeSchema};
  for (std::size_t m = 0; m < c.blocks.size(); ++m) {
    const BlockGene& b = c.blocks[m];
    const auto gls = gl_choices(spec, m);
    const auto gl_at = std::find(gls.begin(), gls.end(),
                                 std::make_pair(b.global_heads, b.local_heads)) - gls.begin();
    const BlockChoices ch = block_choices(spec, m, b.global_heads, b.local_heads);
    code.push_back(static_cast<std::uint8_t>(gl_at));
    for (auto [list, value] : {std::pair{&ch.qkv_dims, b.qkv_dim}, {&ch.ffn_ratios, b.ffn_ratio},
                               {&ch.expansions, b.expansion}, {&ch.kernels, b.kernel}}) {
      const std::size_t at = index_of(*list, value);
      code.push_back(static_cast<std::uint8_t>(at < list->size() ? at : 0));
    }
  }
  return code;
}

Genotype decode_indices(const std::vector<std::uint8_t>& code, const SearchSpaceSpec& spec) {
  if (code.empty() || code.front() != kGenotypeSchema) {
    throw FormatError("unknown genotype index schema");
  }
  if (code.size() != 1 + 5 * static_cast<std::size_t>(spec.num_blocks)) {
    throw FormatError("genotype index code has wrong length");
  }
  Genotype g;
  for (std::size_t m = 0; m < static_cast<std::size_t>(spec.num_blocks); ++m) {
    const std::uint8_t* at = code.data() + 1 + 5 * m;
    const auto gls = gl_choices(spec, m);
    if (at[0] >= gls.size()) throw FormatError("genotype index out of range");
    const auto [gh, lh] = gls[at[0]];
    const BlockChoices ch = block_choices(spec, m, gh, lh);
    auto get = [&](const std::vector<int>& list, std::uint8_t i) {
      if (i >= list.size()) throw FormatError("genotype index out of range");
      return list[i];
    };
    g.blocks.push_back({gh, lh, get(ch.qkv_dims, at[1]), get(ch.ffn_ratios, at[2]),
                        get(ch.expansions, at[3]), get(ch.kernels, at[4])});
  }
  return canonicalize(std::move(g), spec);
}

}  // namespace glit
