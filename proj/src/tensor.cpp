#include "glit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "glit/errors.hpp"
#include "glit/kernels.hpp"
#include "glit/rng.hpp"

namespace glit {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool t_grad_enabled = true;
thread_local OpCounts* t_counts = nullptr;

void count_multiplies(std::size_t n) {
  if (t_counts != nullptr) t_counts->multiplies += n;
}

void count_elementwise(std::size_t n) {
  if (t_counts != nullptr) t_counts->elementwise += n;
}

NodePtr make_node(Shape shape, const char* op) {
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->op = op;
  return node;
}

// Records history on `out` if grad mode is on and any input needs it.
void attach(Node& out, std::vector<NodePtr> inputs, std::function<void(Node&)> fn) {
  if (!t_grad_enabled) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const NodePtr& n) { return n->requires_grad; });
  if (!any) return;
  out.requires_grad = true;
  out.is_leaf = false;
  out.inputs = std::move(inputs);
  out.backward = std::move(fn);
}

// Gradient buffer of input i, or nullptr if it does not need one.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t resolve_seq_len(std::size_t rows, std::size_t seq_len, const char* op) {
  if (seq_len == 0) seq_len = rows;
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) +
                         " rows do not split into sequences of " + std::to_string(seq_len));
  }
  return seq_len;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  auto node = make_node(std::move(shape), "leaf");
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.node_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.node_->data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw IndexError("flat index " + std::to_string(i) + " out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= dim(0) || col >= dim(1)) {
    throw IndexError("index (" + std::to_string(row) + "," + std::to_string(col) +
                     ") out of range for " + shape_str(shape()));
  }
  return node_->data[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const {
  auto node = make_node(shape(), "leaf");
  node->data = node_->data;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward() on undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) throw ContractError("backward() on a tensor without history");

  // Post-order DFS gives a topological order (inputs before consumers).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }
bool grad_enabled() { return t_grad_enabled; }

OpCountScope::OpCountScope() : saved_(t_counts) { t_counts = &counts_; }
OpCountScope::~OpCountScope() { t_counts = saved_; }

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  auto out = make_node({m, n}, "matmul");
  kernels::gemm(a.data(), b.data(), out->data, m, k, n);
  count_multiplies(m * k * n);
  attach(*out, {a.node(), b.node()}, [m, k, n](Node& self) {
    const auto& A = self.inputs[0]->data;
    const auto& B = self.inputs[1]->data;
    if (auto* ga = grad_of(self, 0)) kernels::gemm_nt_acc(self.grad, B, *ga, m, n, k);
    if (auto* gb = grad_of(self, 1)) kernels::gemm_tn_acc(A, self.grad, *gb, k, m, n);
  });
  return Tensor(std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto out = make_node({c, r}, "transpose");
  const auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out->data[j * r + i] = src[i * c + j];
  attach(*out, {a.node()}, [r, c](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
  });
  return Tensor(std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = make_node(a.shape(), "add");
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] + y[i];
  count_elementwise(x.size());
  attach(*out, {a.node(), b.node()}, [](Node& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (auto* g = grad_of(self, s))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
  return Tensor(std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = make_node(a.shape(), "mul");
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * y[i];
  count_elementwise(x.size());
  attach(*out, {a.node(), b.node()}, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
  return Tensor(std::move(out));
}

Tensor scale(const Tensor& a, double factor) {
  auto out = make_node(a.shape(), "scale");
  const auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * factor;
  count_elementwise(x.size());
  attach(*out, {a.node()}, [factor](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
  return Tensor(std::move(out));
}

Tensor sum(const Tensor& a) {
  auto out = make_node({}, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  out->data[0] = total;
  count_elementwise(a.numel());
  attach(*out, {a.node()}, [](Node& self) {
    auto* g = grad_of(self, 0);
    for (double& v : *g) v += self.grad[0];
  });
  return Tensor(std::move(out));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t t = x.dim(0), d = x.dim(1);
  if (bias.dim(0) != d) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  auto out = make_node(x.shape(), "add_bias");
  const auto xs = x.data(), bs = bias.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) out->data[i * d + j] = xs[i * d + j] + bs[j];
  count_elementwise(t * d);
  attach(*out, {x.node(), bias.node()}, [t, d](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[i * d + j];
  });
  return Tensor(std::move(out));
}

Tensor add_periodic(const Tensor& x, const Tensor& addend) {
  require_rank(x, 2, "add_periodic");
  require_rank(addend, 2, "add_periodic");
  const std::size_t rows = x.dim(0), d = x.dim(1), period = addend.dim(0);
  if (addend.dim(1) != d || rows % period != 0) {
    throw DimensionError("add_periodic: " + shape_str(x.shape()) + " + " +
                         shape_str(addend.shape()));
  }
  auto out = make_node(x.shape(), "add_periodic");
  const auto xs = x.data(), as = addend.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out->data[i * d + j] = xs[i * d + j] + as[(i % period) * d + j];
  count_elementwise(rows * d);
  attach(*out, {x.node(), addend.node()}, [rows, d, period](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) (*g)[(i % period) * d + j] += self.grad[i * d + j];
  });
  return Tensor(std::move(out));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

// ---- nonlinearities & normalization ----------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto out = make_node(x.shape(), "softmax_rows");
  const auto xs = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xs.data() + i * c;
    double* y = out->data.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (y[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= total;
  }
  count_elementwise(5 * r * c);
  attach(*out, {x.node()}, [r, c](Node& self) {
    auto* g = grad_of(self, 0);
    const auto& y = self.data;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        (*g)[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
  return Tensor(std::move(out));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const std::size_t t = x.dim(0), d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gamma " +
                         shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  if (!(eps >= 0.0)) throw ConfigError("layer_norm: eps must be non-negative");
  auto out = make_node(x.shape(), "layer_norm");
  auto xhat = std::make_shared<std::vector<double>>(t * d);
  auto rstd = std::make_shared<std::vector<double>>(t);
  const auto xs = x.data(), gs = gamma.data(), bs = beta.data();
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = xs.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[i * d + j] = h;
      out->data[i * d + j] = h * gs[j] + bs[j];
    }
  }
  count_elementwise(7 * t * d);
  attach(*out, {x.node(), gamma.node(), beta.node()}, [t, d, xhat, rstd](Node& self) {
    const auto& gs = self.inputs[1]->data;
    const auto& dy = self.grad;
    if (auto* gg = grad_of(self, 1))
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += dy[i * d + j] * (*xhat)[i * d + j];
    if (auto* gb = grad_of(self, 2))
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += dy[i * d + j];
    if (auto* gx = grad_of(self, 0)) {
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t i = 0; i < t; ++i) {
        double mean_g = 0.0, mean_gh = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = dy[i * d + j] * gs[j];
          mean_g += g;
          mean_gh += g * (*xhat)[i * d + j];
        }
        mean_g *= inv_d;
        mean_gh *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = dy[i * d + j] * gs[j];
          (*gx)[i * d + j] += (*rstd)[i] * (g - mean_g - (*xhat)[i * d + j] * mean_gh);
        }
      }
    }
  });
  return Tensor(std::move(out));
}

Tensor sigmoid(const Tensor& x) {
  auto out = make_node(x.shape(), "sigmoid");
  const auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) out->data[i] = stable_sigmoid(xs[i]);
  count_elementwise(3 * xs.size());
  attach(*out, {x.node()}, [](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double s = self.data[i];
      (*g)[i] += self.grad[i] * s * (1.0 - s);
    }
  });
  return Tensor(std::move(out));
}

Tensor swish(const Tensor& x) {
  auto out = make_node(x.shape(), "swish");
  const auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) out->data[i] = xs[i] * stable_sigmoid(xs[i]);
  count_elementwise(4 * xs.size());
  attach(*out, {x.node()}, [](Node& self) {
    auto* g = grad_of(self, 0);
    const auto& xs = self.inputs[0]->data;
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double s = stable_sigmoid(xs[i]);
      (*g)[i] += self.grad[i] * (s + xs[i] * s * (1.0 - s));
    }
  });
  return Tensor(std::move(out));
}

Tensor glu(const Tensor& x) {
  require_rank(x, 2, "glu");
  const std::size_t t = x.dim(0), c = x.dim(1);
  if (c % 2 != 0) {
    throw ConfigError("glu: channel count must be even, got " + std::to_string(c));
  }
  const std::size_t h = c / 2;
  auto out = make_node({t, h}, "glu");
  const auto xs = x.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < h; ++j)
      out->data[i * h + j] = xs[i * c + j] * stable_sigmoid(xs[i * c + h + j]);
  count_elementwise(4 * t * h);
  attach(*out, {x.node()}, [t, c, h](Node& self) {
    auto* g = grad_of(self, 0);
    const auto& xs = self.inputs[0]->data;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < h; ++j) {
        const double a = xs[i * c + j];
        const double s = stable_sigmoid(xs[i * c + h + j]);
        const double dy = self.grad[i * h + j];
        (*g)[i * c + j] += dy * s;
        (*g)[i * c + h + j] += dy * a * s * (1.0 - s);
      }
    }
  });
  return Tensor(std::move(out));
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  auto out = make_node(x.shape(), "dropout");
  const auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) out->data[i] = xs[i] * (*mask)[i];
  count_elementwise(xs.size());
  attach(*out, {x.node()}, [mask](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (*mask)[i];
  });
  return Tensor(std::move(out));
}

// ---- sequence ops ----------------------------------------------------------

Tensor conv1d_depthwise(const Tensor& x, const Tensor& weight, std::size_t seq_len) {
  require_rank(x, 2, "conv1d_depthwise");
  require_rank(weight, 2, "conv1d_depthwise");
  const std::size_t rows = x.dim(0), channels = x.dim(1), taps = weight.dim(1);
  if (taps % 2 == 0) {
    throw ConfigError("conv1d_depthwise: kernel size must be odd, got " + std::to_string(taps));
  }
  if (weight.dim(0) != channels) {
    throw DimensionError("conv1d_depthwise: input " + shape_str(x.shape()) + " with kernel " +
                         shape_str(weight.shape()));
  }
  const kernels::ConvDims dims{rows, channels, taps,
                               resolve_seq_len(rows, seq_len, "conv1d_depthwise")};
  auto out = make_node(x.shape(), "conv1d_depthwise");
  kernels::depthwise_conv(x.data(), weight.data(), out->data, dims);
  count_multiplies(rows * channels * taps);
  attach(*out, {x.node(), weight.node()}, [dims](Node& self) {
    auto* gx = grad_of(self, 0);
    auto* gw = grad_of(self, 1);
    kernels::depthwise_conv_backward(self.inputs[0]->data, self.inputs[1]->data, self.grad,
                                     gx ? std::span<double>(*gx) : std::span<double>(),
                                     gw ? std::span<double>(*gw) : std::span<double>(), dims);
  });
  return Tensor(std::move(out));
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads, std::size_t seq_len) {
  require_rank(q, 2, "multi_head_attention");
  require_same_shape(q, k, "multi_head_attention");
  require_same_shape(q, v, "multi_head_attention");
  const std::size_t rows = q.dim(0), width = q.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(width) +
                      " does not split into " + std::to_string(heads) + " heads");
  }
  const std::size_t T = resolve_seq_len(rows, seq_len, "multi_head_attention");
  const std::size_t hd = width / heads;
  const kernels::AttentionDims dims{rows / T, T, heads, hd, 1.0 / std::sqrt(double(hd))};
  auto probs = std::make_shared<std::vector<double>>(dims.num_seq * heads * T * T);
  auto out = make_node(q.shape(), "multi_head_attention");
  kernels::attention_forward(q.data(), k.data(), v.data(), *probs, out->data, dims);
  count_multiplies(2 * dims.num_seq * heads * T * T * hd);
  count_elementwise(5 * dims.num_seq * heads * T * T);
  attach(*out, {q.node(), k.node(), v.node()}, [dims, probs](Node& self) {
    auto span_or_empty = [](std::vector<double>* g) {
      return g ? std::span<double>(*g) : std::span<double>();
    };
    kernels::attention_backward(self.inputs[0]->data, self.inputs[1]->data, self.inputs[2]->data,
                                *probs, self.grad, span_or_empty(grad_of(self, 0)),
                                span_or_empty(grad_of(self, 1)), span_or_empty(grad_of(self, 2)),
                                dims);
  });
  return Tensor(std::move(out));
}

Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> targets, double eps) {
  require_rank(logits, 2, "cross_entropy_smoothed");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b) {
    throw DimensionError("cross_entropy_smoothed: " + std::to_string(b) + " rows but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
  auto target_copy = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  for (int t : *target_copy) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("cross_entropy_smoothed: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(b * c);
  const double off = eps / static_cast<double>(c);
  const double on = 1.0 - eps + off;
  const auto xs = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = xs.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      const double log_p = row[j] - log_z;
      (*probs)[i * c + j] = std::exp(log_p);
      const double q = (static_cast<int>(j) == (*target_copy)[i]) ? on : off;
      total -= q * log_p;
    }
  }
  auto out = make_node({}, "cross_entropy_smoothed");
  out->data[0] = total / static_cast<double>(b);
  attach(*out, {logits.node()}, [b, c, on, off, probs, target_copy](Node& self) {
    auto* g = grad_of(self, 0);
    const double scale = self.grad[0] / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double q = (static_cast<int>(j) == (*target_copy)[i]) ? on : off;
        (*g)[i * c + j] += scale * ((*probs)[i * c + j] - q);
      }
  });
  return Tensor(std::move(out));
}

// ---- structural ops --------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodePtr> inputs;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(cols);
    cols += p.dim(1);
    inputs.push_back(p.node());
  }
  auto out = make_node({rows, cols}, "concat_cols");
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const auto src = parts[s].data();
    const std::size_t w = parts[s].dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(src.data() + i * w, w, out->data.data() + i * cols + offsets[s]);
  }
  attach(*out, std::move(inputs), [rows, cols, offsets](Node& self) {
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      auto* g = grad_of(self, s);
      if (!g) continue;
      const std::size_t w = self.inputs[s]->shape[1];
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j) (*g)[i * w + j] += self.grad[i * cols + offsets[s] + j];
    }
  });
  return Tensor(std::move(out));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<NodePtr> inputs;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: column counts differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    inputs.push_back(p.node());
  }
  auto out = make_node({rows, cols}, "concat_rows");
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p.numel();
  }
  attach(*out, std::move(inputs), [](Node& self) {
    std::size_t at = 0;
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      const std::size_t n = self.inputs[s]->data.size();
      if (auto* g = grad_of(self, s))
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[at + i];
      at += n;
    }
  });
  return Tensor(std::move(out));
}

Tensor concat1d(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat1d: no inputs");
  std::size_t n = 0;
  std::vector<NodePtr> inputs;
  for (const Tensor& p : parts) {
    require_rank(p, 1, "concat1d");
    n += p.numel();
    inputs.push_back(p.node());
  }
  auto out = make_node({n}, "concat1d");
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p.numel();
  }
  attach(*out, std::move(inputs), [](Node& self) {
    std::size_t at = 0;
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      const std::size_t n = self.inputs[s]->data.size();
      if (auto* g = grad_of(self, s))
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[at + i];
      at += n;
    }
  });
  return Tensor(std::move(out));
}

Tensor slice(const Tensor& x, std::size_t row0, std::size_t rows, std::size_t col0,
             std::size_t cols) {
  require_rank(x, 2, "slice");
  const std::size_t width = x.dim(1);
  if (rows == 0 || cols == 0 || row0 + rows > x.dim(0) || col0 + cols > width) {
    throw IndexError("slice rows [" + std::to_string(row0) + "," + std::to_string(row0 + rows) +
                     ") cols [" + std::to_string(col0) + "," + std::to_string(col0 + cols) +
                     ") outside " + shape_str(x.shape()));
  }
  auto out = make_node({rows, cols}, "slice");
  const auto src = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(src.data() + (row0 + i) * width + col0, cols, out->data.data() + i * cols);
  attach(*out, {x.node()}, [row0, rows, col0, cols, width](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        (*g)[(row0 + i) * width + col0 + j] += self.grad[i * cols + j];
  });
  return Tensor(std::move(out));
}

Tensor slice1d(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 1, "slice1d");
  if (count == 0 || start + count > x.dim(0)) {
    throw IndexError("slice1d [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside " + shape_str(x.shape()));
  }
  auto out = make_node({count}, "slice1d");
  std::copy_n(x.data().data() + start, count, out->data.data());
  attach(*out, {x.node()}, [start, count](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < count; ++i) (*g)[start + i] += self.grad[i];
  });
  return Tensor(std::move(out));
}

Tensor gather_rows(const Tensor& x, std::size_t offset, std::size_t stride) {
  require_rank(x, 2, "gather_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (stride == 0 || offset >= stride || rows % stride != 0) {
    throw DimensionError("gather_rows: offset " + std::to_string(offset) + ", stride " +
                         std::to_string(stride) + " on " + shape_str(x.shape()));
  }
  const std::size_t n = rows / stride;
  auto out = make_node({n, d}, "gather_rows");
  const auto src = x.data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(src.data() + (i * stride + offset) * d, d, out->data.data() + i * d);
  attach(*out, {x.node()}, [n, d, offset, stride](Node& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) (*g)[(i * stride + offset) * d + j] += self.grad[i * d + j];
  });
  return Tensor(std::move(out));
}

Tensor prepend_token(const Tensor& x, const Tensor& token, std::size_t seq_len) {
  require_rank(x, 2, "prepend_token");
  require_rank(token, 1, "prepend_token");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (token.dim(0) != d) {
    throw DimensionError("prepend_token: tokens " + shape_str(x.shape()) + " with token " +
                         shape_str(token.shape()));
  }
  const std::size_t T = resolve_seq_len(rows, seq_len, "prepend_token");
  const std::size_t n = rows / T;
  auto out = make_node({n * (T + 1), d}, "prepend_token");
  const auto xs = x.data(), ts = token.data();
  for (std::size_t s = 0; s < n; ++s) {
    double* dst = out->data.data() + s * (T + 1) * d;
    std::copy(ts.begin(), ts.end(), dst);
    std::copy_n(xs.data() + s * T * d, T * d, dst + d);
  }
  attach(*out, {x.node(), token.node()}, [n, T, d](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < T * d; ++i) (*g)[s * T * d + i] += self.grad[s * (T + 1) * d + d + i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[s * (T + 1) * d + j];
  });
  return Tensor(std::move(out));
}

}  // namespace glit
