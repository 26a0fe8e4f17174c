#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "glit/rng.hpp"
#include "glit/tensor.hpp"

namespace glit::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = scale * rng.normal();
  return t;
}

// Largest norm-wise relative error ||analytic - numeric|| / max(||analytic||,
// ||numeric||) over the inputs, for the scalar sum(f() * probe) with a fixed
// random probe. Central differences with step h. An input whose analytic and
// numeric gradient norms are both at most zero_floor counts as an exact zero
// (error 0); `zeros`, if given, receives the indices of such inputs.
inline double gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                             double h = 1e-6, std::uint64_t seed = 7, double zero_floor = 0.0,
                             std::vector<std::size_t>* zeros = nullptr) {
  Tensor out = f();
  Rng rng(seed);
  Tensor probe = random_tensor(out.shape(), rng, 1.0, false);
  const auto objective = [&] {
    Tensor y = f();
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y.data()[i] * probe.data()[i];
    return s;
  };
  for (auto& in : inputs) in.zero_grad();
  sum(mul(f(), probe)).backward();
  double worst = 0.0;
  for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
    Tensor& in = inputs[idx];
    std::vector<double> analytic(in.numel(), 0.0);
    if (in.has_grad()) analytic.assign(in.grad().begin(), in.grad().end());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = objective();
      data[i] = saved - h;
      const double down = objective();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::sqrt(std::max(a2, n2));
    if (denom <= zero_floor) {
      if (zeros != nullptr) zeros->push_back(idx);
      continue;
    }
    if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 || std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace glit::testing

#include "glit/model.hpp"

namespace glit::testing {

inline void randomize(const ParamList& params, Rng& rng, double scale = 0.3) {
  for (NamedTensor p : params)
    for (double& v : p.tensor.mutable_data()) v = scale * rng.normal();
}

// Random weights for one block of the given gene.
inline BlockWeights random_block(const BlockGene& gene, int heads, int dim, Rng& rng,
                                 double scale = 0.3) {
  ModelConfig cfg;
  cfg.image = {1, 2, 2, 1};
  cfg.embed_dim = dim;
  cfg.num_heads = heads;
  cfg.num_blocks = 1;
  cfg.num_classes = 2;
  Genotype g;
  g.blocks = {gene};
  ModelWeights w = allocate_weights(cfg, g, true);
  randomize(named_params(w), rng, scale);
  return w.blocks.front();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir()
      : path_(std::filesystem::temp_directory_path() /
              ("glit_test_" + std::to_string(std::random_device{}()))) {
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string path() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace glit::testing
