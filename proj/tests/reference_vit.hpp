#pragma once

// Plain-loop pre-norm ViT block for cross-checking the (N, 0) GL block.

#include <cmath>
#include <vector>

namespace glit::testing {

using Mat = std::vector<double>;  // row-major

struct VitWeights {
  std::size_t d, heads, head_dim, hidden;
  Mat ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

inline Mat ref_layer_norm(const Mat& x, std::size_t t, std::size_t d, const Mat& g, const Mat& b,
                          double eps) {
  Mat y(x.size());
  for (std::size_t r = 0; r < t; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x[r * d + c];
    mean /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) var += (x[r * d + c] - mean) * (x[r * d + c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = (x[r * d + c] - mean) * inv * g[c] + b[c];
  }
  return y;
}

inline Mat ref_linear(const Mat& x, std::size_t t, std::size_t in, const Mat& w, const Mat& b,
                      std::size_t out) {
  Mat y(t * out);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[i * out + o];
      y[r * out + o] = s + b[o];
    }
  return y;
}

inline Mat ref_vit_block(const Mat& x, std::size_t t, const VitWeights& w, double eps = 1e-6) {
  const std::size_t d = w.d, width = w.heads * w.head_dim;
  const Mat xn = ref_layer_norm(x, t, d, w.ln1_g, w.ln1_b, eps);
  const Mat q = ref_linear(xn, t, d, w.wq, w.bq, width);
  const Mat k = ref_linear(xn, t, d, w.wk, w.bk, width);
  const Mat v = ref_linear(xn, t, d, w.wv, w.bv, width);
  Mat att(t * width, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.head_dim));
  for (std::size_t h = 0; h < w.heads; ++h) {
    const std::size_t off = h * w.head_dim;
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(t);
      double mx = -1e300;
      for (std::size_t j = 0; j < t; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < w.head_dim; ++c) dot += q[i * width + off + c] * k[j * width + off + c];
        s[j] = dot * scale;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t c = 0; c < w.head_dim; ++c) att[i * width + off + c] += s[j] / z * v[j * width + off + c];
    }
  }
  const Mat proj = ref_linear(att, t, width, w.wo, w.bo, d);
  Mat y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + proj[i];
  const Mat yn = ref_layer_norm(y, t, d, w.ln2_g, w.ln2_b, eps);
  Mat hdn = ref_linear(yn, t, d, w.w1, w.b1, w.hidden);
  for (double& e : hdn) e = e / (1.0 + std::exp(-e));
  const Mat f = ref_linear(hdn, t, w.hidden, w.w2, w.b2, d);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += f[i];
  return y;
}

}  // namespace glit::testing
