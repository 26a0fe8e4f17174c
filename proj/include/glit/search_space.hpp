#pragma once

// Two-level architecture space: per-block (G, L) head split on the high
// level, per-block (d_k, d_z, E, K) on the low level.

#include <boost/multiprecision/cpp_int.hpp>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace glit {

class Rng;

using BigInt = boost::multiprecision::cpp_int;

struct BlockGene {
  int global_heads = 0;  // G
  int local_heads = 0;   // L
  int qkv_dim = 0;       // d_k (ignored when G == 0)
  int ffn_ratio = 0;     // d_z
  int expansion = 0;     // E (ignored when L == 0)
  int kernel = 0;        // K (ignored when L == 0)

  bool has_global() const { return global_heads > 0; }
  bool has_local() const { return local_heads > 0; }
  bool is_mixed() const { return has_global() && has_local(); }

  // Equality and ordering skip fields the block does not use.
  friend bool operator==(const BlockGene& a, const BlockGene& b);
  friend bool operator<(const BlockGene& a, const BlockGene& b);
};

struct Genotype {
  std::vector<BlockGene> blocks;

  std::size_t num_blocks() const { return blocks.size(); }

  // "M;(G,L,dk,dz,E,K)|(G,L,dk,dz,E,K)|..."
  std::string to_string() const;
  static Genotype parse(const std::string& text);

  friend bool operator==(const Genotype& a, const Genotype& b) { return a.blocks == b.blocks; }
  friend bool operator<(const Genotype& a, const Genotype& b) { return a.blocks < b.blocks; }
};

struct GenotypeHash {
  std::size_t operator()(const Genotype& g) const;
};

enum class Stage {
  kJoint,  // (G, L) and all four low-level axes searched together
  kHigh,   // only (G, L); low-level axes pinned to the defaults
  kLow,    // (G, L) fixed per block; reduced low-level axes searched
};

const char* stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct LowLevelDefaults {
  int qkv_dim = 192;
  int ffn_ratio = 4;
  int expansion = 2;
  int kernel = 31;
};

struct SearchSpaceSpec {
  int num_blocks = 12;  // M
  int num_heads = 3;    // N
  std::vector<int> qkv_dims{96, 192, 384};
  std::vector<int> ffn_ratios{2, 4, 6};
  std::vector<int> expansions{1, 2, 4};
  std::vector<int> kernels{17, 31, 45};
  Stage stage = Stage::kJoint;
  LowLevelDefaults defaults;
  // Stage kLow only: the fixed (G, L) of every block.
  std::vector<std::pair<int, int>> fixed_high;

  // The full ImageNet-scale space (M = 12, N = 3).
  static SearchSpaceSpec table2();

  // Throws ConfigError when a list is empty, a kernel is even, etc.
  void check() const;
  std::string to_string() const;
  static SearchSpaceSpec parse(const std::string& text);
};

// Searchable values for each axis of one block. The lists already reflect the
// stage (pinned axes have one entry); `gl` lists the (G, L) options.
struct BlockChoices {
  std::vector<std::pair<int, int>> gl;
  std::vector<int> qkv_dims;
  std::vector<int> ffn_ratios;
  std::vector<int> expansions;
  std::vector<int> kernels;
};

// Options for block m; the low-level lists depend on which (G, L) is chosen.
std::vector<std::pair<int, int>> gl_choices(const SearchSpaceSpec& spec, std::size_t block);
BlockChoices block_choices(const SearchSpaceSpec& spec, std::size_t block, int global_heads,
                           int local_heads);

// Resets ignored fields to the first entry of their choice list.
Genotype canonicalize(Genotype g, const SearchSpaceSpec& spec);

// ((N+1) V1 V2 V3 V4)^M for kJoint, (N+1)^M for kHigh, product of the reduced
// per-block sizes for kLow.
BigInt space_size(const SearchSpaceSpec& spec);
// (N+1)^M + (V1 V2 V3 V4)^M: the two hierarchical spaces before reduction.
BigInt hierarchical_size(const SearchSpaceSpec& spec);

// Visits every raw index combination once (space_size(spec) calls) with the
// canonicalized genotype. Stop early by returning false from the visitor.
void enumerate(const SearchSpaceSpec& spec, const std::function<bool(const Genotype&)>& visit);
std::vector<Genotype> enumerate_all(const SearchSpaceSpec& spec);

Genotype sample_uniform(const SearchSpaceSpec& spec, Rng& rng);

// Stage-2 space after fixing the per-block (G, L) chosen in stage 1.
SearchSpaceSpec reduce_for_stage2(const std::vector<std::pair<int, int>>& high_star,
                                  const SearchSpaceSpec& spec);
SearchSpaceSpec reduce_for_stage2(const Genotype& high_star, const SearchSpaceSpec& spec);
// Stage-1 space: same lists, stage kHigh.
SearchSpaceSpec stage1_space(const SearchSpaceSpec& spec);

struct Violation {
  int block;  // -1 for genotype-level problems
  std::string axis;
  std::string message;
};

std::vector<Violation> validate(const Genotype& g, const SearchSpaceSpec& spec);
std::string format_violations(const std::vector<Violation>& violations);
// Throws ValidationError listing every violation.
void require_valid(const Genotype& g, const SearchSpaceSpec& spec);

// Genotype as choice indices (5 per block: gl, dk, dz, E, K), prefixed with
// the schema id, and back.
inline constexpr std::uint8_t kGenotypeSchema = 1;
std::vector<std::uint8_t> encode_indices(const Genotype& g, const SearchSpaceSpec& spec);
Genotype decode_indices(const std::vector<std::uint8_t>& code, const SearchSpaceSpec& spec);

}  // namespace glit
