// Serial reference vs OpenMP kernels at desk-profile shapes, plus one
// end-to-end forward/backward of a supernet path under each backend.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "glit/kernels.hpp"
#include "glit/model.hpp"
#include "glit/rng.hpp"
#include "glit/search_space.hpp"
#include "glit/tensor.hpp"

namespace {

using namespace glit;
namespace k = glit::kernels;

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

// Batch 64 of 17 tokens at width 48: the desk training shape.
constexpr std::size_t kRows = 64 * 17;

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const std::size_t m = kRows, kk = 48, n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(m * kk, 1);
  const auto b = random_vec(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Gemm(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}
BENCHMARK(BM_Gemm<k::serial::gemm>)->Name("gemm/serial")->Arg(48)->Arg(192);
BENCHMARK(BM_Gemm<k::omp::gemm>)->Name("gemm/omp")->Arg(48)->Arg(192);

template <auto Attn>
void BM_Attention(benchmark::State& state) {
  const k::AttentionDims d{64, 17, 3, static_cast<std::size_t>(state.range(0)), 0.25};
  const auto q = random_vec(d.rows() * d.width(), 3);
  const auto kv = random_vec(d.rows() * d.width(), 4);
  const auto v = random_vec(d.rows() * d.width(), 5);
  std::vector<double> probs(d.num_seq * d.heads * d.seq_len * d.seq_len);
  std::vector<double> out(d.rows() * d.width());
  for (auto _ : state) {
    Attn(q, kv, v, probs, out, d);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Attention<k::serial::attention_forward>)->Name("attention/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_Attention<k::omp::attention_forward>)->Name("attention/omp")->Arg(16)->Arg(32);

template <auto Conv>
void BM_Depthwise(benchmark::State& state) {
  const k::ConvDims d{kRows, 32, static_cast<std::size_t>(state.range(0)), 17};
  const auto x = random_vec(d.rows * d.channels, 6);
  const auto w = random_vec(d.channels * d.taps, 7);
  std::vector<double> y(d.rows * d.channels);
  for (auto _ : state) {
    Conv(x, w, y, d);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Depthwise<k::serial::depthwise_conv>)->Name("depthwise/serial")->Arg(3)->Arg(7);
BENCHMARK(BM_Depthwise<k::omp::depthwise_conv>)->Name("depthwise/omp")->Arg(3)->Arg(7);

void BM_ModelStep(benchmark::State& state) {
  const k::ScopedBackend backend(state.range(0) == 0 ? k::Backend::kSerial : k::Backend::kOpenMP);
  ModelConfig cfg;
  cfg.image = {3, 32, 32, 4};
  cfg.embed_dim = 48;
  cfg.num_heads = 3;
  cfg.num_blocks = 4;
  cfg.num_classes = 10;
  const Genotype g = Genotype::parse("4;(3,0,48,4,2,5)|(2,1,48,4,2,5)|(1,2,48,4,2,5)|(0,3,48,4,2,5)");
  Rng rng(1);
  const GlitModel model = GlitModel::init(cfg, g, rng);
  const auto px = random_vec(64 * 16 * cfg.image.token_dim(), 8);
  const Tensor patches = Tensor::from({64 * 16, cfg.image.token_dim()}, px);
  for (auto _ : state) {
    Tensor loss = sum(model.forward(patches, true, &rng));
    loss.backward();
    for (auto& p : model.params()) p.tensor.zero_grad();
  }
  state.SetLabel(state.range(0) == 0 ? "serial" : "omp");
}
BENCHMARK(BM_ModelStep)->Name("model_step")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
