#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle. Operations on tensors that require gradients
// record a node holding their inputs and an adjoint rule; backward() walks
// the recorded graph in reverse topological order. Leaf gradients accumulate
// across backward() calls until zero_grad() is called.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pedcc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  // Direct writes bypass the graph; only meaningful on leaves (parameters,
  // inputs) between passes.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, no gradient requirement.
  Tensor detach() const;
  // Deep copy of values; the copy is a leaf.
  Tensor clone(bool requires_grad = false) const;

  // Name of the operation that produced this tensor ("leaf" for leaves).
  std::string op_name() const;

  const detail::TensorImpl* id() const noexcept { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend struct detail::TensorImpl;
  friend class Graph;
  friend class OpBuilder;
};

// Reverse-traversable record of the operations that produced a tensor.
class Graph {
 public:
  // Topologically ordered: every node's inputs precede it; root is last.
  static Graph trace(const Tensor& root);

  const std::vector<Tensor>& nodes() const noexcept { return nodes_; }
  std::vector<Tensor> inputs_of(const Tensor& t) const;

 private:
  std::vector<Tensor> nodes_;
};

// Populates d(loss)/d(leaf) for every reachable leaf with requires_grad.
// Throws ContractError when loss is not a single-element tensor.
void backward(const Tensor& loss);

// ---- elementwise ---------------------------------------------------------
// Binary operands must have equal shapes or one of them a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// x^p. For x = 0 and p < 1 the derivative is taken as 0.
Tensor power(const Tensor& a, double p);
Tensor relu(const Tensor& a);
// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& a, double floor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- reductions (fixed ascending summation order) ------------------------

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

// ---- linear algebra and shape --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// t[N×K] + bias[K] broadcast over rows.
Tensor add_bias(const Tensor& t, const Tensor& bias);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
// out[i] = a[i][index[i]].
Tensor pick(const Tensor& a, std::span<const int> index);

// Rows with norm below epsilon are passed through unchanged and their
// indices appended to degenerate_rows when provided.
Tensor l2_normalize_rows(const Tensor& a, double epsilon = 1e-12,
                         std::vector<std::size_t>* degenerate_rows = nullptr);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
// d[i][j] = ‖a_i − b_j‖².
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

// ---- gradient routing ----------------------------------------------------

// Identity forward; contributes no adjoint to its input.
Tensor stop_gradient(const Tensor& a);
// Identity forward; multiplies the adjoint by factor. Used as a probe hook.
Tensor gradient_scale(const Tensor& a, double factor);

// ---- convolutional building blocks (NCHW) --------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding);
// [N×C×H×W] → [N×C]
Tensor global_avg_pool(const Tensor& x);

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.99;
  double epsilon = 1e-5;
};
// Per-channel normalization over axis 1 of an [N×C] or [N×C×H×W] input.
// In training mode batch statistics are used and the running averages are
// updated as r ← momentum·r + (1−momentum)·batch.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

// ---- verification --------------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences over every coordinate of t compared to the analytic
// gradient of f at t. Relative error is |a−n| / max(|a|, |n|, abs_floor).
GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& t, double h = 1e-5,
                                    double abs_floor = 1e-8);
double grad_check(const ScalarFn& f, const Tensor& t, double h = 1e-5);

}  // namespace pedcc
