#pragma once

// Image -> token sequence -> logits plumbing around the transformer blocks.
//
// Images are channel-major [c x h x w]. The image is cut into an m x m grid of
// patches; patch (row, col) becomes token row*m + col, holding the patch's
// pixels flattened as [c][ph][pw].

#include <cstddef>
#include <span>

#include "glit/tensor.hpp"

namespace glit {

struct ImageSpec {
  int channels = 3;  // c
  int width = 32;    // w
  int height = 32;   // h
  int grid = 4;      // m

  std::size_t num_patches() const { return static_cast<std::size_t>(grid) * grid; }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_width() const { return static_cast<std::size_t>(width / grid); }
  std::size_t patch_height() const { return static_cast<std::size_t>(height / grid); }
  std::size_t token_dim() const {
    return static_cast<std::size_t>(channels) * patch_width() * patch_height();
  }
  std::size_t pixels() const { return static_cast<std::size_t>(channels) * width * height; }

  // Throws ConfigError unless w and h are positive multiples of m.
  void check() const;
};

// [c x h x w] -> [m^2 x token_dim].
Tensor patchify(const Tensor& image, const ImageSpec& spec);
Tensor unpatchify(const Tensor& tokens, const ImageSpec& spec);

// `count` images stored back to back (spec.pixels() values each) ->
// [count*m^2 x token_dim], no gradient.
Tensor patchify_batch(std::span<const double> pixels, std::size_t count, const ImageSpec& spec);

struct TokenSequence {
  Tensor tokens;        // [num_sequences*seq_len x d], row 0 of each sequence is the class token
  std::size_t seq_len;  // m^2 + 1

  std::size_t num_sequences() const { return tokens.dim(0) / seq_len; }
  std::size_t dim() const { return tokens.dim(1); }
};

struct EmbedWeights {
  Tensor proj_w;       // [token_dim x d]
  Tensor proj_b;       // [d]
  Tensor class_token;  // [d]
  Tensor pos_emb;      // [(m^2+1) x d]; undefined when positional embeddings are off
};

// tokens = concat(class_token, proj(patches)) + pos_emb, per image.
TokenSequence embed(const Tensor& patches, const EmbedWeights& w, std::size_t num_patches);

// Logits [num_sequences x C] from the class token of every sequence.
Tensor classify(const TokenSequence& seq, const Tensor& head_w, const Tensor& head_b);

}  // namespace glit
