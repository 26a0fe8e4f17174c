#pragma once

// Analytic operation and parameter counts.
//
// MACs count the scalar multiplies of the dense products (linear layers,
// attention scores and values, depthwise taps including zero padding).
// FLOPs = 2 * MACs + elementwise work, with fixed per-element charges below.
// The instrumented forward pass (OpCountScope) reports the same two numbers.

#include <cstdint>
#include <string>
#include <vector>

#include "glit/model.hpp"
#include "glit/search_space.hpp"

namespace glit {

struct SearchSpaceSpec;

namespace cost {
inline constexpr std::uint64_t kSoftmax = 5;     // per attention score
inline constexpr std::uint64_t kActivation = 4;  // Swish, GLU gate
inline constexpr std::uint64_t kLayerNorm = 7;   // per normalized element
inline constexpr std::uint64_t kAdd = 1;         // bias and residual adds
}  // namespace cost

struct AttentionCost {
  std::uint64_t projections = 0;  // Q, K, V: 3 * T * d * G * d_head MACs
  std::uint64_t scores = 0;       // Q K^T and P V: 2 * T^2 * G * d_head MACs
  std::uint64_t softmax = 0;      // elementwise, kSoftmax * T^2 * G
  std::uint64_t bias = 0;         // elementwise, 3 * T * G * d_head

  std::uint64_t macs() const { return projections + scores; }
  std::uint64_t flops() const { return 2 * macs() + softmax + bias; }
};

AttentionCost cost_attention(std::uint64_t tokens, std::uint64_t dim, std::uint64_t global_heads,
                             std::uint64_t head_dim);

struct ConvHeadCost {
  std::uint64_t pointwise = 0;    // MACs of both pointwise layers
  std::uint64_t depthwise = 0;    // MACs, T * E * d_local * K
  std::uint64_t elementwise = 0;  // biases, two norms, GLU, Swish

  std::uint64_t macs() const { return pointwise + depthwise; }
  std::uint64_t flops() const { return 2 * macs() + elementwise; }
};

// One conv head producing d_local = d/N channels.
ConvHeadCost cost_conv_head(std::uint64_t tokens, std::uint64_t dim, std::uint64_t local_dim,
                            std::uint64_t expansion, std::uint64_t kernel);

struct CostRow {
  std::string name;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
  std::uint64_t params = 0;

  std::uint64_t flops() const { return 2 * macs + elementwise; }
};

struct CostReport {
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::vector<CostRow> rows;  // patch embed, block 0..M-1, head

  double gmacs() const { return static_cast<double>(macs) * 1e-9; }
  double gflops() const { return static_cast<double>(flops) * 1e-9; }
  std::string table() const;
  // "macs=<n> flops=<n> params=<n>"
  std::string machine_line() const;
};

// Per-image cost of one forward pass.
CostReport cost_model(const Genotype& g, const ModelConfig& cfg);
std::uint64_t param_count(const Genotype& g, const ModelConfig& cfg);
std::uint64_t supernet_param_count(const ModelConfig& cfg, const SearchSpaceSpec& space);

// Twelve (3, 0) blocks at d = 192 on 224 x 224 images in a 14 x 14 grid.
ModelConfig deit_tiny_config();
Genotype deit_tiny_genotype();

}  // namespace glit
