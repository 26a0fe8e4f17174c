#include "glit/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "glit/errors.hpp"

namespace glit {

namespace {

constexpr const char* kHeader = "block   G   L   d_k  d_z   E   K  heads";

}  // namespace

std::string describe_arch(const Genotype& g) {
  std::ostringstream os;
  os << kHeader << '\n';
  for (std::size_t m = 0; m < g.blocks.size(); ++m) {
    const BlockGene& b = g.blocks[m];
    os << std::setw(5) << m << std::setw(4) << b.global_heads << std::setw(4) << b.local_heads;
    os << std::setw(6);
    if (b.has_global()) os << b.qkv_dim; else os << '-';
    os << std::setw(5) << b.ffn_ratio << std::setw(4);
    if (b.has_local()) os << b.expansion; else os << '-';
    os << std::setw(4);
    if (b.has_local()) os << b.kernel; else os << '-';
    os << "  " << std::string(static_cast<std::size_t>(b.global_heads), 'G')
       << std::string(static_cast<std::size_t>(b.local_heads), 'L') << '\n';
  }
  os << "G = global (self-attention) head, L = local (convolution) head\n";
  return os.str();
}

Genotype parse_arch(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw FormatError("architecture table header missing");
  Genotype g;
  while (std::getline(is, line)) {
    if (line.rfind("G = ", 0) == 0 || line.empty()) break;
    std::istringstream ls(line);
    std::string idx, gh, lh, dk, dz, e, k, bar;
    if (!(ls >> idx >> gh >> lh >> dk >> dz >> e >> k)) throw FormatError("bad architecture row: " + line);
    ls >> bar;
    const auto num = [&](const std::string& s) {
      try {
        return s == "-" ? 0 : std::stoi(s);
      } catch (const std::logic_error&) {
        throw FormatError("bad architecture row: " + line);
      }
    };
    if (num(idx) != static_cast<int>(g.blocks.size())) throw FormatError("rows out of order: " + line);
    BlockGene b{num(gh), num(lh), num(dk), num(dz), num(e), num(k)};
    const auto bar_g = static_cast<int>(std::count(bar.begin(), bar.end(), 'G'));
    const auto bar_l = static_cast<int>(std::count(bar.begin(), bar.end(), 'L'));
    if (bar_g != b.global_heads || bar_l != b.local_heads) {
      throw FormatError("bar does not match head counts: " + line);
    }
    g.blocks.push_back(b);
  }
  if (g.blocks.empty()) throw FormatError("architecture table has no rows");
  return g;
}

GrayImage token_heatmap(const Tensor& tokens, int grid, int width, int height) {
  const std::size_t n = static_cast<std::size_t>(grid) * grid;
  if (tokens.rank() != 2 || tokens.dim(0) != n) {
    throw DimensionError("heat map expects " + std::to_string(n) + " patch tokens, got " +
                         shape_str(tokens.shape()));
  }
  if (width < grid || height < grid) throw DimensionError("heat map smaller than the token grid");
  const std::size_t d = tokens.dim(1);
  const auto x = tokens.data();
  std::vector<double> mean(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) mean[t] += x[t * d + j];
    mean[t] /= static_cast<double>(d);
  }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double range = *hi - *lo;
  std::vector<std::uint8_t> level(n);
  for (std::size_t t = 0; t < n; ++t) {
    level[t] = range > 0.0 ? static_cast<std::uint8_t>(std::lround((mean[t] - *lo) / range * 255.0))
                           : std::uint8_t{128};
  }
  GrayImage img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height)};
  for (int y = 0; y < height; ++y)
    for (int x_ = 0; x_ < width; ++x_) {
      const int r = y * grid / height, c = x_ * grid / width;
      img.pixels[static_cast<std::size_t>(y) * width + x_] = level[static_cast<std::size_t>(r) * grid + c];
    }
  return img;
}

GrayImage heatmap(const GlitModel& model, std::span<const double> image) {
  const ImageSpec& spec = model.config().image;
  if (image.size() != spec.pixels()) {
    throw DimensionError("image has " + std::to_string(image.size()) + " values, model expects " +
                         std::to_string(spec.pixels()));
  }
  NoGradGuard no_grad;
  const TokenSequence seq = model.forward_tokens(patchify_batch(image, 1, spec));
  const Tensor patches = slice(seq.tokens, 1, spec.num_patches(), 0, seq.dim());
  return token_heatmap(patches, spec.grid, spec.width, spec.height);
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string magic;
  GrayImage img;
  int maxval = 0;
  if (!(is >> magic >> img.width >> img.height >> maxval) || magic != "P5" || maxval != 255) {
    throw FormatError("not an 8-bit binary PGM");
  }
  is.get();
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  const auto offset = static_cast<std::size_t>(is.tellg());
  if (bytes.size() != offset + n) throw CorruptionError("PGM pixel data has the wrong length");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return img;
}

}  // namespace glit
