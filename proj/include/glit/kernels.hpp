#pragma once

// Dense compute kernels behind the tensor ops.
//
// Every kernel exists twice: a plain serial reference in kernels::serial and an
// OpenMP version in kernels::omp. The OpenMP versions split work only over
// independent outputs and keep the per-element reduction order of the serial
// code, so both produce bit-identical results. The unqualified functions
// dispatch on the process-wide backend.

#include <cstddef>
#include <span>

namespace glit::kernels {

enum class Backend { kSerial, kOpenMP };

void set_backend(Backend backend);
Backend backend();

class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : saved_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(saved_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend saved_;
};

// Attention problem layout: num_seq sequences of seq_len rows stacked in
// Q/K/V of width heads*head_dim. probs is [num_seq][heads][seq_len][seq_len].
struct AttentionDims {
  std::size_t num_seq;
  std::size_t seq_len;
  std::size_t heads;
  std::size_t head_dim;
  double scale;

  std::size_t rows() const { return num_seq * seq_len; }
  std::size_t width() const { return heads * head_dim; }
};

// Depthwise conv layout: rows = num_seq * seq_len tokens of `channels`
// features; kernel is [channels][taps], taps odd, zero "same" padding inside
// each sequence.
struct ConvDims {
  std::size_t rows;
  std::size_t channels;
  std::size_t taps;
  std::size_t seq_len;
};

#define GLIT_KERNEL_DECLS                                                                     \
  /* c[m x n] = a[m x k] * b[k x n] */                                                        \
  void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,       \
            std::size_t m, std::size_t k, std::size_t n);                                     \
  /* c[m x n] += a[m x k] * b[n x k]^T */                                                     \
  void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, \
                   std::size_t m, std::size_t k, std::size_t n);                              \
  /* c[m x n] += a[k x m]^T * b[k x n] */                                                     \
  void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, \
                   std::size_t m, std::size_t k, std::size_t n);                              \
  void depthwise_conv(std::span<const double> x, std::span<const double> w,                  \
                      std::span<double> y, const ConvDims& dims);                             \
  /* dx += dL/dx, dw += dL/dw; either may be empty to skip it */                              \
  void depthwise_conv_backward(std::span<const double> x, std::span<const double> w,         \
                               std::span<const double> dy, std::span<double> dx,              \
                               std::span<double> dw, const ConvDims& dims);                   \
  void attention_forward(std::span<const double> q, std::span<const double> k,               \
                         std::span<const double> v, std::span<double> probs,                  \
                         std::span<double> out, const AttentionDims& dims);                   \
  /* dq/dk/dv accumulate; an empty span skips that gradient */                                \
  void attention_backward(std::span<const double> q, std::span<const double> k,              \
                          std::span<const double> v, std::span<const double> probs,           \
                          std::span<const double> dout, std::span<double> dq,                 \
                          std::span<double> dk, std::span<double> dv, const AttentionDims& dims);

namespace serial {
GLIT_KERNEL_DECLS
}  // namespace serial

namespace omp {
GLIT_KERNEL_DECLS
}  // namespace omp

GLIT_KERNEL_DECLS

#undef GLIT_KERNEL_DECLS

}  // namespace glit::kernels
