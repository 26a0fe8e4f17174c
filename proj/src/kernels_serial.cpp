// Straightforward reference kernels. Kept readable rather than fast; the
// OpenMP versions in kernels_omp.cpp must match these bit-for-bit.

#include <algorithm>
#include <cmath>
#include <vector>

#include "glit/kernels.hpp"

namespace glit::kernels::serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] += sum;
    }
  }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t r = 0; r < k; ++r) sum += a[r * m + i] * b[r * n + j];
      c[i * n + j] += sum;
    }
  }
}

void depthwise_conv(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvDims& d) {
  const auto half = static_cast<std::ptrdiff_t>(d.taps / 2);
  const auto len = static_cast<std::ptrdiff_t>(d.seq_len);
  for (std::size_t row = 0; row < d.rows; ++row) {
    const auto t = static_cast<std::ptrdiff_t>(row % d.seq_len);
    const std::size_t base = row - static_cast<std::size_t>(t);
    for (std::size_t c = 0; c < d.channels; ++c) {
      double sum = 0.0;
      for (std::size_t j = 0; j < d.taps; ++j) {
        const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - half;
        if (src < 0 || src >= len) continue;
        sum += w[c * d.taps + j] * x[(base + static_cast<std::size_t>(src)) * d.channels + c];
      }
      y[row * d.channels + c] = sum;
    }
  }
}

void depthwise_conv_backward(std::span<const double> x, std::span<const double> w,
                             std::span<const double> dy, std::span<double> dx,
                             std::span<double> dw, const ConvDims& d) {
  const auto half = static_cast<std::ptrdiff_t>(d.taps / 2);
  const auto len = static_cast<std::ptrdiff_t>(d.seq_len);
  if (!dx.empty()) {
    for (std::size_t row = 0; row < d.rows; ++row) {
      const auto t = static_cast<std::ptrdiff_t>(row % d.seq_len);
      const std::size_t base = row - static_cast<std::size_t>(t);
      for (std::size_t c = 0; c < d.channels; ++c) {
        double sum = 0.0;
        for (std::size_t j = 0; j < d.taps; ++j) {
          const std::ptrdiff_t out = t - static_cast<std::ptrdiff_t>(j) + half;
          if (out < 0 || out >= len) continue;
          sum += w[c * d.taps + j] * dy[(base + static_cast<std::size_t>(out)) * d.channels + c];
        }
        dx[row * d.channels + c] += sum;
      }
    }
  }
  if (!dw.empty()) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      for (std::size_t j = 0; j < d.taps; ++j) {
        double sum = 0.0;
        for (std::size_t row = 0; row < d.rows; ++row) {
          const auto t = static_cast<std::ptrdiff_t>(row % d.seq_len);
          const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - half;
          if (src < 0 || src >= len) continue;
          const std::size_t base = row - static_cast<std::size_t>(t);
          sum += dy[row * d.channels + c] *
                 x[(base + static_cast<std::size_t>(src)) * d.channels + c];
        }
        dw[c * d.taps + j] += sum;
      }
    }
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> probs, std::span<double> out,
                       const AttentionDims& d) {
  const std::size_t T = d.seq_len;
  const std::size_t W = d.width();
  std::vector<double> scores(T);
  for (std::size_t s = 0; s < d.num_seq; ++s) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      const std::size_t col = h * d.head_dim;
      double* p = probs.data() + (s * d.heads + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const std::size_t qi = (s * T + i) * W + col;
        double row_max = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          const std::size_t kj = (s * T + j) * W + col;
          double dot = 0.0;
          for (std::size_t e = 0; e < d.head_dim; ++e) dot += q[qi + e] * k[kj + e];
          scores[j] = dot * d.scale;
          row_max = std::max(row_max, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          scores[j] = std::exp(scores[j] - row_max);
          total += scores[j];
        }
        for (std::size_t j = 0; j < T; ++j) p[i * T + j] = scores[j] / total;
        for (std::size_t e = 0; e < d.head_dim; ++e) {
          double acc = 0.0;
          for (std::size_t j = 0; j < T; ++j) acc += p[i * T + j] * v[(s * T + j) * W + col + e];
          out[qi + e] = acc;
        }
      }
    }
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, const AttentionDims& d) {
  const std::size_t T = d.seq_len;
  const std::size_t W = d.width();
  std::vector<double> ds(T * T);
  for (std::size_t s = 0; s < d.num_seq; ++s) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      const std::size_t col = h * d.head_dim;
      const double* p = probs.data() + (s * d.heads + h) * T * T;
      auto at = [&](std::size_t row, std::size_t e) { return (s * T + row) * W + col + e; };
      if (!dv.empty()) {
        for (std::size_t j = 0; j < T; ++j) {
          for (std::size_t e = 0; e < d.head_dim; ++e) {
            double acc = 0.0;
            for (std::size_t i = 0; i < T; ++i) acc += p[i * T + j] * dout[at(i, e)];
            dv[at(j, e)] += acc;
          }
        }
      }
      for (std::size_t i = 0; i < T; ++i) {
        double weighted = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          double dp = 0.0;
          for (std::size_t e = 0; e < d.head_dim; ++e) dp += dout[at(i, e)] * v[at(j, e)];
          ds[i * T + j] = dp;
          weighted += p[i * T + j] * dp;
        }
        for (std::size_t j = 0; j < T; ++j) ds[i * T + j] = p[i * T + j] * (ds[i * T + j] - weighted);
      }
      if (!dq.empty()) {
        for (std::size_t i = 0; i < T; ++i) {
          for (std::size_t e = 0; e < d.head_dim; ++e) {
            double acc = 0.0;
            for (std::size_t j = 0; j < T; ++j) acc += ds[i * T + j] * k[at(j, e)];
            dq[at(i, e)] += acc * d.scale;
          }
        }
      }
      if (!dk.empty()) {
        for (std::size_t j = 0; j < T; ++j) {
          for (std::size_t e = 0; e < d.head_dim; ++e) {
            double acc = 0.0;
            for (std::size_t i = 0; i < T; ++i) acc += ds[i * T + j] * q[at(i, e)];
            dk[at(j, e)] += acc * d.scale;
          }
        }
      }
    }
  }
}

}  // namespace glit::kernels::serial
