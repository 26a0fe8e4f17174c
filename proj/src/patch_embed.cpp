#include "glit/patch_embed.hpp"

#include <string>

#include "glit/errors.hpp"

namespace glit {

void ImageSpec::check() const {
  if (channels < 1 || width < 1 || height < 1 || grid < 1) {
    throw ConfigError("image spec extents must be positive");
  }
  if (width % grid != 0 || height % grid != 0) {
    throw ConfigError("image " + std::to_string(width) + "x" + std::to_string(height) +
                      " does not split into a " + std::to_string(grid) + "x" +
                      std::to_string(grid) + " patch grid");
  }
}

namespace {

void check_image(const Tensor& image, const ImageSpec& spec) {
  spec.check();
  const Shape want{static_cast<std::size_t>(spec.channels), static_cast<std::size_t>(spec.height),
                   static_cast<std::size_t>(spec.width)};
  if (image.shape() != want) {
    throw DimensionError("image shape " + shape_str(image.shape()) + " does not match spec " +
                         shape_str(want));
  }
}

// Calls f(pixel_index, token, offset_in_token) for every pixel.
template <typename F>
void for_each_pixel(const ImageSpec& spec, F&& f) {
  const std::size_t ph = spec.patch_height(), pw = spec.patch_width();
  const std::size_t w = static_cast<std::size_t>(spec.width);
  const std::size_t h = static_cast<std::size_t>(spec.height);
  const std::size_t m = static_cast<std::size_t>(spec.grid);
  for (std::size_t c = 0; c < static_cast<std::size_t>(spec.channels); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t token = (y / ph) * m + (x / pw);
        const std::size_t offset = (c * ph + y % ph) * pw + x % pw;
        f((c * h + y) * w + x, token, offset);
      }
}

}  // namespace

Tensor patchify(const Tensor& image, const ImageSpec& spec) {
  check_image(image, spec);
  return patchify_batch(image.data(), 1, spec);
}

Tensor unpatchify(const Tensor& tokens, const ImageSpec& spec) {
  spec.check();
  const Shape want{spec.num_patches(), spec.token_dim()};
  if (tokens.shape() != want) {
    throw DimensionError("token shape " + shape_str(tokens.shape()) + " does not match spec " +
                         shape_str(want));
  }
  Tensor image = Tensor::zeros({static_cast<std::size_t>(spec.channels),
                                static_cast<std::size_t>(spec.height),
                                static_cast<std::size_t>(spec.width)});
  auto out = image.mutable_data();
  const auto src = tokens.data();
  const std::size_t td = spec.token_dim();
  for_each_pixel(spec, [&](std::size_t pixel, std::size_t token, std::size_t offset) {
    out[pixel] = src[token * td + offset];
  });
  return image;
}

Tensor patchify_batch(std::span<const double> pixels, std::size_t count, const ImageSpec& spec) {
  spec.check();
  if (pixels.size() != count * spec.pixels()) {
    throw DimensionError("patchify_batch: " + std::to_string(pixels.size()) +
                         " values for " + std::to_string(count) + " images of " +
                         std::to_string(spec.pixels()));
  }
  const std::size_t np = spec.num_patches(), td = spec.token_dim();
  Tensor out = Tensor::zeros({count * np, td});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < count; ++i) {
    const double* src = pixels.data() + i * spec.pixels();
    double* base = dst.data() + i * np * td;
    for_each_pixel(spec, [&](std::size_t pixel, std::size_t token, std::size_t offset) {
      base[token * td + offset] = src[pixel];
    });
  }
  return out;
}

TokenSequence embed(const Tensor& patches, const EmbedWeights& w, std::size_t num_patches) {
  Tensor tokens = linear(patches, w.proj_w, w.proj_b);
  tokens = prepend_token(tokens, w.class_token, num_patches);
  if (w.pos_emb.defined()) {
    if (w.pos_emb.dim(0) != num_patches + 1) {
      throw DimensionError("positional embedding " + shape_str(w.pos_emb.shape()) + " for " +
                           std::to_string(num_patches + 1) + " tokens");
    }
    tokens = add_periodic(tokens, w.pos_emb);
  }
  return {tokens, num_patches + 1};
}

Tensor classify(const TokenSequence& seq, const Tensor& head_w, const Tensor& head_b) {
  return linear(gather_rows(seq.tokens, 0, seq.seq_len), head_w, head_b);
}

}  // namespace glit
