#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "impl.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "×" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

void check_finite(std::span<const double> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw NumericError(std::string(what) + " produced a non-finite value at index " +
                         std::to_string(i));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> values(shape_numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape))
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  check_finite(values, "tensor construction");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  return shape()[axis];
}

std::span<const double> Tensor::data() const {
  shape();
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a matrix, got " + shape_str(shape()));
  return impl_->data[row * impl_->shape[1] + col];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return shape(), impl_->node == nullptr; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  return impl_->grad;
}

void Tensor::zero_grad() {
  shape();
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl_->data, requires_grad); }

std::string Tensor::op_name() const {
  shape();
  return impl_->node ? std::string(impl_->node->name) : std::string("leaf");
}

// ---- OpBuilder -------------------------------------------------------------

Tensor OpBuilder::make(Shape shape, std::vector<double> data, std::string_view name,
                       std::vector<Tensor> inputs, detail::BackwardFn backward) {
  check_finite(data, name);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    impl->requires_grad = true;
    impl->node = std::make_unique<detail::Node>(
        detail::Node{name, std::move(inputs), std::move(backward)});
  }
  return Tensor(std::move(impl));
}

std::vector<double>& OpBuilder::grad_buffer(const Tensor& t) {
  auto& g = t.impl_->grad;
  if (g.empty()) g.assign(t.impl_->data.size(), 0.0);
  return g;
}

// ---- Graph -----------------------------------------------------------------

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  std::unordered_set<const TensorImpl*> visited;
  // Iterative post-order DFS keeps deep graphs off the call stack.
  std::vector<std::pair<Tensor, std::size_t>> stack{{root, 0}};
  visited.insert(root.impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto* node = t.impl_->node.get();
    if (node && next < node->inputs.size()) {
      const Tensor& in = node->inputs[next++];
      if (visited.insert(in.impl_.get()).second) stack.emplace_back(in, 0);
      continue;
    }
    g.nodes_.push_back(t);
    stack.pop_back();
  }
  return g;
}

std::vector<Tensor> Graph::inputs_of(const Tensor& t) const {
  const auto* node = t.impl_->node.get();
  return node ? node->inputs : std::vector<Tensor>{};
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad())
    throw ContractError("backward() called on a loss that depends on no gradient-requiring tensor");

  const Graph graph = Graph::trace(loss);
  // Interior adjoints start fresh each pass; leaves keep accumulating.
  for (const Tensor& t : graph.nodes()) {
    if (!t.is_leaf() && t.requires_grad()) {
      auto& g = OpBuilder::grad_buffer(t);
      std::fill(g.begin(), g.end(), 0.0);
    }
  }
  OpBuilder::grad_buffer(loss)[0] += 1.0;

  const auto& nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const TensorImpl& impl = OpBuilder::impl(*it);
    if (impl.node && impl.requires_grad && !impl.grad.empty()) impl.node->backward(impl);
  }
}

// ---- finite-difference checker ----------------------------------------------

GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& t, double h, double abs_floor) {
  if (!(h > 0.0)) throw ArgumentError("grad_check step must be positive");
  Tensor x = t.clone(true);
  Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("grad_check needs a scalar-valued function");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: function value is not finite");
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  }

  GradCheckResult result;
  Tensor probe = t.clone(false);
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double fp = f(probe).item();
    values[i] = orig - h;
    const double fm = f(probe).item();
    values[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite evaluation at coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > result.max_rel_error || i == 0) {
      result = {std::max(rel, result.max_rel_error), i, analytic[i], numeric};
    }
  }
  return result;
}

double grad_check(const ScalarFn& f, const Tensor& t, double h) {
  return grad_check_detailed(f, t, h).max_rel_error;
}

}  // namespace pedcc
