#include "glit/kernels.hpp"

#include <atomic>

namespace glit::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::kOpenMP};
}  // namespace

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }
Backend backend() { return g_backend.load(std::memory_order_relaxed); }

#define GLIT_DISPATCH(name, ...) \
  (backend() == Backend::kSerial ? serial::name(__VA_ARGS__) : omp::name(__VA_ARGS__))

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
  GLIT_DISPATCH(gemm, a, b, c, m, k, n);
}

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  GLIT_DISPATCH(gemm_nt_acc, a, b, c, m, k, n);
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  GLIT_DISPATCH(gemm_tn_acc, a, b, c, m, k, n);
}

void depthwise_conv(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvDims& dims) {
  GLIT_DISPATCH(depthwise_conv, x, w, y, dims);
}

void depthwise_conv_backward(std::span<const double> x, std::span<const double> w,
                             std::span<const double> dy, std::span<double> dx,
                             std::span<double> dw, const ConvDims& dims) {
  GLIT_DISPATCH(depthwise_conv_backward, x, w, dy, dx, dw, dims);
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> probs, std::span<double> out,
                       const AttentionDims& dims) {
  GLIT_DISPATCH(attention_forward, q, k, v, probs, out, dims);
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, const AttentionDims& dims) {
  GLIT_DISPATCH(attention_backward, q, k, v, probs, dout, dq, dk, dv, dims);
}

#undef GLIT_DISPATCH

}  // namespace glit::kernels
