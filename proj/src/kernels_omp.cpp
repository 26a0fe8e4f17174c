// OpenMP kernels. Work is split across independent output rows, channels or
// (sequence, head) pairs; each output element is reduced in the same order as
// the serial reference, so results are bit-identical for any thread count.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "glit/kernels.hpp"

namespace glit::kernels::omp {

namespace {

using Index = std::ptrdiff_t;

Index as_index(std::size_t n) { return static_cast<Index>(n); }

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < as_index(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < as_index(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
      c[i * n + j] += sum;
    }
  }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (Index ii = 0; ii < as_index(m); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t r = 0; r < k; ++r) {
        const double ari = a[r * m + i];
        const double* brow = b.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += ari * brow[j];
      }
      double* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += acc[j];
    }
  }
}

void depthwise_conv(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvDims& d) {
  const Index half = as_index(d.taps / 2);
  const Index len = as_index(d.seq_len);
#pragma omp parallel for schedule(static)
  for (Index rr = 0; rr < as_index(d.rows); ++rr) {
    const auto row = static_cast<std::size_t>(rr);
    const Index t = as_index(row % d.seq_len);
    const std::size_t base = row - static_cast<std::size_t>(t);
    double* yrow = y.data() + row * d.channels;
    std::fill(yrow, yrow + d.channels, 0.0);
    const Index j_lo = std::max<Index>(0, half - t);
    const Index j_hi = std::min<Index>(as_index(d.taps), len - t + half);
    for (Index j = j_lo; j < j_hi; ++j) {
      const double* xrow = x.data() + (base + static_cast<std::size_t>(t + j - half)) * d.channels;
      for (std::size_t c = 0; c < d.channels; ++c) {
        yrow[c] += w[c * d.taps + static_cast<std::size_t>(j)] * xrow[c];
      }
    }
  }
}

void depthwise_conv_backward(std::span<const double> x, std::span<const double> w,
                             std::span<const double> dy, std::span<double> dx,
                             std::span<double> dw, const ConvDims& d) {
  const Index half = as_index(d.taps / 2);
  const Index len = as_index(d.seq_len);
  if (!dx.empty()) {
#pragma omp parallel
    {
      std::vector<double> acc(d.channels);
#pragma omp for schedule(static)
      for (Index rr = 0; rr < as_index(d.rows); ++rr) {
        const auto row = static_cast<std::size_t>(rr);
        const Index t = as_index(row % d.seq_len);
        const std::size_t base = row - static_cast<std::size_t>(t);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (Index j = 0; j < as_index(d.taps); ++j) {
          const Index out = t - j + half;
          if (out < 0 || out >= len) continue;
          const double* dyrow = dy.data() + (base + static_cast<std::size_t>(out)) * d.channels;
          for (std::size_t c = 0; c < d.channels; ++c) {
            acc[c] += w[c * d.taps + static_cast<std::size_t>(j)] * dyrow[c];
          }
        }
        double* dxrow = dx.data() + row * d.channels;
        for (std::size_t c = 0; c < d.channels; ++c) dxrow[c] += acc[c];
      }
    }
  }
  if (!dw.empty()) {
#pragma omp parallel for schedule(static)
    for (Index cc = 0; cc < as_index(d.channels); ++cc) {
      const auto c = static_cast<std::size_t>(cc);
      for (std::size_t j = 0; j < d.taps; ++j) {
        double sum = 0.0;
        for (std::size_t row = 0; row < d.rows; ++row) {
          const Index t = as_index(row % d.seq_len);
          const Index src = t + as_index(j) - half;
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
  const Index jobs = as_index(d.num_seq * d.heads);
#pragma omp parallel
  {
    std::vector<double> scores(T);
    std::vector<double> acc(d.head_dim);
#pragma omp for schedule(static)
    for (Index job = 0; job < jobs; ++job) {
      const std::size_t s = static_cast<std::size_t>(job) / d.heads;
      const std::size_t h = static_cast<std::size_t>(job) % d.heads;
      const std::size_t col = h * d.head_dim;
      double* p = probs.data() + static_cast<std::size_t>(job) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qrow = q.data() + (s * T + i) * W + col;
        double row_max = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          const double* krow = k.data() + (s * T + j) * W + col;
          double dot = 0.0;
          for (std::size_t e = 0; e < d.head_dim; ++e) dot += qrow[e] * krow[e];
          scores[j] = dot * d.scale;
          row_max = std::max(row_max, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          scores[j] = std::exp(scores[j] - row_max);
          total += scores[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < T; ++j) {
          const double pij = scores[j] / total;
          p[i * T + j] = pij;
          const double* vrow = v.data() + (s * T + j) * W + col;
          for (std::size_t e = 0; e < d.head_dim; ++e) acc[e] += pij * vrow[e];
        }
        std::copy(acc.begin(), acc.end(), out.data() + (s * T + i) * W + col);
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
  const std::size_t E = d.head_dim;
  const Index jobs = as_index(d.num_seq * d.heads);
#pragma omp parallel
  {
    std::vector<double> ds(T * T);
    std::vector<double> acc(T * E);
#pragma omp for schedule(static)
    for (Index job = 0; job < jobs; ++job) {
      const std::size_t s = static_cast<std::size_t>(job) / d.heads;
      const std::size_t h = static_cast<std::size_t>(job) % d.heads;
      const std::size_t col = h * E;
      const double* p = probs.data() + static_cast<std::size_t>(job) * T * T;
      auto at = [&](std::size_t row) { return (s * T + row) * W + col; };

      if (!dv.empty()) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < T; ++i) {
          const double* gi = dout.data() + at(i);
          for (std::size_t j = 0; j < T; ++j) {
            const double pij = p[i * T + j];
            for (std::size_t e = 0; e < E; ++e) acc[j * E + e] += pij * gi[e];
          }
        }
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t e = 0; e < E; ++e) dv[at(j) + e] += acc[j * E + e];
      }

      for (std::size_t i = 0; i < T; ++i) {
        const double* gi = dout.data() + at(i);
        double weighted = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          const double* vj = v.data() + at(j);
          double dp = 0.0;
          for (std::size_t e = 0; e < E; ++e) dp += gi[e] * vj[e];
          ds[i * T + j] = dp;
          weighted += p[i * T + j] * dp;
        }
        for (std::size_t j = 0; j < T; ++j) ds[i * T + j] = p[i * T + j] * (ds[i * T + j] - weighted);
      }

      if (!dq.empty()) {
        for (std::size_t i = 0; i < T; ++i) {
          double* out = acc.data() + i * E;
          std::fill(out, out + E, 0.0);
          for (std::size_t j = 0; j < T; ++j) {
            const double sij = ds[i * T + j];
            const double* kj = k.data() + at(j);
            for (std::size_t e = 0; e < E; ++e) out[e] += sij * kj[e];
          }
          for (std::size_t e = 0; e < E; ++e) dq[at(i) + e] += out[e] * d.scale;
        }
      }
      if (!dk.empty()) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < T; ++i) {
          const double* qi = q.data() + at(i);
          for (std::size_t j = 0; j < T; ++j) {
            const double sij = ds[i * T + j];
            for (std::size_t e = 0; e < E; ++e) acc[j * E + e] += sij * qi[e];
          }
        }
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t e = 0; e < E; ++e) dk[at(j) + e] += acc[j * E + e] * d.scale;
      }
    }
  }
}

}  // namespace glit::kernels::omp
