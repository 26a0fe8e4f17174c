#include "glit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "glit/errors.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace {

constexpr double kSeparableAmplitude = 0.3;
constexpr double kSeparableNoise = 0.08;
constexpr double kSeparableMargin = 0.5;
constexpr int kTemplatePeriod = 4;

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// +-1 class templates: a random 4x4 tile per channel repeated over the image,
// so every patch whose side is a multiple of 4 sees the whole tile.
std::vector<double> class_templates(const SyntheticSpec& s, Rng& rng) {
  const std::size_t px = static_cast<std::size_t>(s.channels) * s.width * s.height;
  std::vector<double> t(static_cast<std::size_t>(s.num_classes) * px);
  for (int c = 0; c < s.num_classes; ++c) {
    std::vector<double> cells(static_cast<std::size_t>(s.channels) * kTemplatePeriod * kTemplatePeriod);
    for (double& v : cells) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (int ch = 0; ch < s.channels; ++ch)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const int cy = y % kTemplatePeriod, cx = x % kTemplatePeriod;
          t[c * px + (static_cast<std::size_t>(ch) * s.height + y) * s.width + x] =
              cells[(static_cast<std::size_t>(ch) * kTemplatePeriod + cy) * kTemplatePeriod + cx];
        }
  }
  return t;
}

}  // namespace

std::span<const std::uint8_t> Dataset::image(std::size_t i) const {
  if (i >= size()) throw IndexError("image " + std::to_string(i) + " of " + std::to_string(size()));
  return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.channels = channels;
  out.width = width;
  out.height = height;
  out.num_classes = num_classes;
  out.pixels.reserve(indices.size() * image_bytes());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

void Dataset::require_shape(const ImageSpec& spec) const {
  if (spec.channels != channels || spec.width != width || spec.height != height) {
    throw DimensionError("dataset images are " + std::to_string(channels) + "x" +
                         std::to_string(height) + "x" + std::to_string(width) + ", model expects " +
                         std::to_string(spec.channels) + "x" + std::to_string(spec.height) + "x" +
                         std::to_string(spec.width));
  }
}

Tensor Dataset::patches(std::span<const std::size_t> indices, const ImageSpec& spec,
                        std::span<const std::uint8_t> flip) const {
  require_shape(spec);
  std::vector<double> buf(indices.size() * image_bytes());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = image(indices[b]);
    double* dst = buf.data() + b * image_bytes();
    const bool mirror = !flip.empty() && flip[b] != 0;
    for (std::size_t row = 0; row < static_cast<std::size_t>(channels) * height; ++row)
      for (int x = 0; x < width; ++x) {
        const int sx = mirror ? width - 1 - x : x;
        dst[row * width + x] = img[row * width + sx] / 255.0;
      }
  }
  return patchify_batch(buf, indices.size(), spec);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

DatasetSplit carve_split(const Dataset& all, std::size_t n_val, std::size_t n_test,
                         std::uint64_t seed) {
  if (n_val + n_test > all.size()) {
    throw ConfigError("split sizes val=" + std::to_string(n_val) + " test=" +
                      std::to_string(n_test) + " exceed " + std::to_string(all.size()) +
                      " samples");
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const std::span<const std::size_t> idx(order);
  DatasetSplit split;
  split.seed = seed;
  split.val = all.subset(idx.subspan(0, n_val));
  split.test = all.subset(idx.subspan(n_val, n_test));
  split.train = all.subset(idx.subspan(n_val + n_test));
  return split;
}

const char* synthetic_name(SyntheticKind kind) {
  return kind == SyntheticKind::kSeparable ? "separable" : "locality";
}

SyntheticKind parse_synthetic(const std::string& name) {
  if (name == "separable") return SyntheticKind::kSeparable;
  if (name == "locality" || name == "locality-biased") return SyntheticKind::kLocality;
  throw ConfigError("unknown synthetic dataset kind '" + name + "'");
}

int LinearRule::predict(std::span<const std::uint8_t> image) const {
  const std::size_t px = image.size();
  int best = 0;
  double best_score = 0.0;
  for (std::size_t c = 0; c < bias.size(); ++c) {
    double s = bias[c];
    for (std::size_t i = 0; i < px; ++i) s += weights[c * px + i] * (image[i] / 255.0);
    if (c == 0 || s > best_score) {
      best = static_cast<int>(c);
      best_score = s;
    }
  }
  return best;
}

LinearRule separable_rule(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  LinearRule rule;
  rule.weights = class_templates(spec, rng);
  // Nearest-template rule: <t_c, x> - |t_c|^2 amplitude correction around 0.5.
  const std::size_t px = static_cast<std::size_t>(spec.channels) * spec.width * spec.height;
  rule.bias.assign(static_cast<std::size_t>(spec.num_classes), 0.0);
  for (int c = 0; c < spec.num_classes; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < px; ++i) s += rule.weights[c * px + i] * 0.5;
    rule.bias[static_cast<std::size_t>(c)] = -s;
  }
  return rule;
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, const SyntheticSpec& spec,
                      std::uint64_t seed) {
  if (spec.channels < 1 || spec.width < 1 || spec.height < 1 || spec.num_classes < 2) {
    throw ConfigError("synthetic spec needs positive image dims and at least 2 classes");
  }
  Dataset ds;
  ds.channels = spec.channels;
  ds.width = spec.width;
  ds.height = spec.height;
  ds.num_classes = spec.num_classes;
  const std::size_t px = ds.image_bytes();
  ds.pixels.reserve(n * px);
  ds.labels.reserve(n);
  Rng rng(seed);

  if (kind == SyntheticKind::kSeparable) {
    const LinearRule rule = separable_rule(spec, seed);
    std::vector<std::uint8_t> img(px);
    std::vector<double> scores(static_cast<std::size_t>(spec.num_classes));
    while (ds.size() < n) {
      const int cls = static_cast<int>(ds.size() % static_cast<std::size_t>(spec.num_classes));
      for (std::size_t i = 0; i < px; ++i) {
        img[i] = quantize(0.5 + kSeparableAmplitude * rule.weights[cls * px + i] +
                          kSeparableNoise * rng.normal());
      }
      for (int c = 0; c < spec.num_classes; ++c) {
        double s = rule.bias[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < px; ++i) s += rule.weights[c * px + i] * (img[i] / 255.0);
        scores[static_cast<std::size_t>(c)] = s;
      }
      const auto top = std::max_element(scores.begin(), scores.end());
      const int label = static_cast<int>(top - scores.begin());
      double runner_up = -1e300;
      for (std::size_t c = 0; c < scores.size(); ++c)
        if (static_cast<int>(c) != label) runner_up = std::max(runner_up, scores[c]);
      if (label != cls || *top - runner_up < kSeparableMargin) continue;
      ds.pixels.insert(ds.pixels.end(), img.begin(), img.end());
      ds.labels.push_back(label);
    }
    return ds;
  }

  if (spec.width < kMotifSize || spec.height < kMotifSize) {
    throw ConfigError("images are smaller than the " + std::to_string(kMotifSize) + "px motif");
  }
  // Each motif lights exactly half of its cells, so every class has the same
  // mean intensity and only the spatial arrangement carries the label.
  const std::size_t cells = static_cast<std::size_t>(kMotifSize) * kMotifSize;
  std::vector<std::vector<std::uint8_t>> motifs;
  while (motifs.size() < static_cast<std::size_t>(spec.num_classes)) {
    std::vector<std::uint8_t> m(cells, 0);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(cells / 2), 1);
    for (std::size_t i = cells; i > 1; --i) std::swap(m[i - 1], m[rng.index(i)]);
    if (std::find(motifs.begin(), motifs.end(), m) == motifs.end()) motifs.push_back(std::move(m));
  }
  std::vector<std::uint8_t> img(px);
  for (std::size_t s = 0; s < n; ++s) {
    const int cls = static_cast<int>(s % static_cast<std::size_t>(spec.num_classes));
    for (auto& v : img) v = quantize(0.45 + 0.1 * rng.uniform());
    // Motifs sit on a kMotifSize lattice, so each falls inside one patch
    // whenever the patch side is a multiple of kMotifSize.
    const auto cell = [&](int extent) {
      return kMotifSize * static_cast<int>(rng.index(static_cast<std::size_t>(extent / kMotifSize)));
    };
    const int oy = cell(spec.height);
    const int ox = cell(spec.width);
    const auto& m = motifs[static_cast<std::size_t>(cls)];
    for (int ch = 0; ch < spec.channels; ++ch)
      for (int y = 0; y < kMotifSize; ++y)
        for (int x = 0; x < kMotifSize; ++x) {
          img[(static_cast<std::size_t>(ch) * spec.height + oy + y) * spec.width + ox + x] =
              m[static_cast<std::size_t>(y) * kMotifSize + x] ? 255 : 0;
        }
    ds.pixels.insert(ds.pixels.end(), img.begin(), img.end());
    ds.labels.push_back(cls);
  }
  return ds;
}

}  // namespace glit
