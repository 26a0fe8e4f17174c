#pragma once

// Dense row-major float64 tensors with reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Ops record a backward closure when any input requires grad (and grad mode is
// enabled); backward() on a scalar walks the graph in reverse topological
// order. Leaf gradients accumulate across backward() calls until zero_grad().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace glit {

class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Uniform in [lo, hi).
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  void backward() const;

  // New leaf with copied data and no history.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const char* op_name() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// Counts forward-pass arithmetic on this thread while an OpCountScope is live.
// `multiplies` counts scalar multiplies of the dense kernels (matmul, depthwise
// conv including padded taps, attention products); `elementwise` counts other
// arithmetic in norms, activations, softmax and residual adds.
struct OpCounts {
  std::uint64_t multiplies = 0;
  std::uint64_t elementwise = 0;
};

class OpCountScope {
 public:
  OpCountScope();
  ~OpCountScope();
  OpCountScope(const OpCountScope&) = delete;
  OpCountScope& operator=(const OpCountScope&) = delete;
  const OpCounts& counts() const { return counts_; }

 private:
  OpCounts counts_;
  OpCounts* saved_;
};

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
// [t x d] + [d], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// [n*p x d] + [p x d], the addend repeating every p rows.
Tensor add_periodic(const Tensor& x, const Tensor& addend);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
// [t x 2h] -> [t x h]: value half times sigmoid of gate half.
Tensor glu(const Tensor& x);
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Per-channel 1D conv along the token axis with zero "same" padding. The rows
// are split into consecutive sequences of seq_len tokens (0 = all rows form
// one sequence); padding applies at each sequence boundary.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& weight, std::size_t seq_len = 0);

// Fused multi-head attention over consecutive sequences of seq_len rows.
// q/k/v are [rows x heads*head_dim]; head h uses columns [h*hd, (h+1)*hd).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads, std::size_t seq_len = 0);

// Mean over the batch of -sum(q * log softmax(logits)), where q puts
// (1 - eps) + eps/C on the target and eps/C on every other class.
Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> targets, double eps);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat1d(const std::vector<Tensor>& parts);
// Rectangular sub-block of a 2D tensor (copy; gradient scatters back).
Tensor slice(const Tensor& x, std::size_t row0, std::size_t rows, std::size_t col0,
             std::size_t cols);
Tensor slice1d(const Tensor& x, std::size_t start, std::size_t count);
// Rows offset, offset+stride, ... of a 2D tensor.
Tensor gather_rows(const Tensor& x, std::size_t offset, std::size_t stride);
// Inserts `token` [d] before every block of seq_len rows of x [n*seq_len x d].
Tensor prepend_token(const Tensor& x, const Tensor& token, std::size_t seq_len);

}  // namespace glit
