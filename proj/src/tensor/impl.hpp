#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "pedcc/tensor.hpp"

namespace pedcc::detail {

struct TensorImpl;

// Adjoint rule: reads out.grad (and out.data if needed), accumulates into
// the grad buffers of the captured inputs.
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct Node {
  std::string_view name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::unique_ptr<Node> node;  // null for leaves
};

}  // namespace pedcc::detail

namespace pedcc {

// Constructs op outputs and gives adjoint rules access to input buffers.
class OpBuilder {
 public:
  // Validates finiteness of data, then records a node when any input
  // requires gradients.
  static Tensor make(Shape shape, std::vector<double> data, std::string_view name,
                     std::vector<Tensor> inputs, detail::BackwardFn backward);

  static const detail::TensorImpl& impl(const Tensor& t) { return *t.impl_; }
  static bool wants_grad(const Tensor& t) { return t.impl_->requires_grad; }
  // Grad buffer of t, zero-initialized on first use.
  static std::vector<double>& grad_buffer(const Tensor& t);
};

}  // namespace pedcc
