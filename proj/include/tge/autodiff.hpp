#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles. Every tensor is two-dimensional (rows x cols); vectors
// are 1 x n or n x 1 and scalars are 1 x 1. Broadcasting exists only where an
// op says so (add_row).

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tge::ad {

using Shape = std::array<std::size_t, 2>;

/// Backward rule: receives the op's forward output, the output gradient and
/// one writable gradient buffer per input (empty when that input does not
/// require a gradient). Rules accumulate (+=) into the input buffers.
using BackwardFn = std::function<void(std::span<const double> out, std::span<const double> grad_out,
                                      std::span<std::span<double>> grad_in)>;

namespace detail {
struct Node {
  Shape shape{0, 0};
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v) { return constant({1, 1}, {v}); }
  /// A leaf that accumulates gradients (parameters, probed inputs).
  static Tensor variable(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape[0]; }
  std::size_t cols() const { return node_->shape[1]; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (optimizer updates).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  /// Accumulated gradient; empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor record(Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
};

/// Topologically ordered record of the operations performed while it is the
/// active tape on this thread. Constructing a tape activates it; destruction
/// restores the previously active one.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse pass from a scalar loss recorded on this tape. Leaf gradients
  /// accumulate. The tape can be consumed only once.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  static Tape* active();

 private:
  friend Tensor record(Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
  std::uint64_t id_;
  Tape* previous_;
  bool consumed_ = false;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates an op result. It is recorded on the active tape when any input
/// requires a gradient; otherwise it is a constant and `fn` is dropped.
Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn fn);

// ---------------------------------------------------------------- primitives

Tensor matmul(const Tensor& a, const Tensor& b);
/// x (n x in) · w (in x out) + b (1 x out). The shared-weight per-point layer.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (n x d) + row (1 x d) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);  // subgradient 0 at 0
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
/// Elementwise Smooth L1 with threshold 1: 0.5 d² if |d| < 1, else |d| − 0.5.
Tensor smooth_l1_terms(const Tensor& d);

Tensor softmax_rows(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::uint32_t> rows);

Tensor sum(const Tensor& a);   // 1 x 1
Tensor mean(const Tensor& a);  // 1 x 1
/// Per-column maximum over all rows → 1 x d. Gradient flows to the first argmax.
Tensor max_pool_rows(const Tensor& a);
/// Per-column maximum within row groups [offsets[g], offsets[g+1]) → groups x d.
Tensor group_max_pool(const Tensor& a, std::span<const std::uint32_t> offsets);

/// softmax(q kᵀ / √d_head) v, computed independently for `heads` column blocks.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads = 1);

// ---------------------------------------------------------------- parameters

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> m;  // AdamW first moment
  std::vector<double> v;  // AdamW second moment
};

class ParameterSet {
 public:
  /// Adds a zero-initialized parameter and returns its index.
  std::size_t add(std::string name, Shape shape);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const Tensor& tensor(std::size_t i) const { return params_[i].value; }

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }

  std::size_t scalar_count() const;
  void zero_grad();
  /// Current gradients, zero-filled where no gradient has been accumulated.
  std::vector<std::vector<double>> gradients() const;
  /// Deep copy with fresh leaves (for independent workers).
  ParameterSet clone() const;

 private:
  std::vector<Parameter> params_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay (θ ← θ − lr·wd·θ) followed by the bias-corrected
/// Adam update. `step` counts from 1.
void adamw_step(ParameterSet& params, std::span<const std::vector<double>> grads, const AdamWConfig& config,
                long step);

}  // namespace tge::ad
