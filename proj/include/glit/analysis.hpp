#pragma once

// Architecture rendering and token heat maps.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glit/model.hpp"

namespace glit {

// Aligned (G, L, d_k, d_z, E, K) table plus one bar per block: 'G' per global
// head, 'L' per local head. parse_arch reads the table back.
std::string describe_arch(const Genotype& g);
Genotype parse_arch(const std::string& text);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// tokens: [m^2 x d] patch tokens (class token already removed). Channel mean
// per token, min-max scaled to [0, 255] (a constant field maps to 128), then
// nearest-neighbour upsampled to width x height.
GrayImage token_heatmap(const Tensor& tokens, int grid, int width, int height);

// Runs one image [c*h*w values in [0, 1]] through the model and maps the
// final patch tokens. Throws DimensionError on a size mismatch.
GrayImage heatmap(const GlitModel& model, std::span<const double> image);

// Binary PGM (P5, maxval 255).
std::string encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const std::string& bytes);

}  // namespace glit
