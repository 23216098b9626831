#include <algorithm>
#include <cmath>

#include "impl.hpp"
#include "pedcc/errors.hpp"
#include "pedcc/kernels.hpp"

namespace pedcc {

using detail::TensorImpl;

namespace {

const std::vector<double>& vals(const Tensor& t) { return OpBuilder::impl(t).data; }

void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + " needs a matrix, got shape " + shape_str(t.shape()));
}

// Output shape of a binary elementwise op: equal shapes or one single-element side.
Shape broadcast_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

// Adds adjoint contributions g[i] (i over output) into t, summing when t is
// the broadcast single-element side.
template <class F>
void accumulate(const Tensor& t, std::size_t out_n, F contribution) {
  if (!OpBuilder::wants_grad(t)) return;
  auto& g = OpBuilder::grad_buffer(t);
  if (g.size() == out_n) {
    for (std::size_t i = 0; i < out_n; ++i) g[i] += contribution(i);
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < out_n; ++i) s += contribution(i);
    g[0] += s;
  }
}

inline double bval(const std::vector<double>& v, std::size_t i) { return v.size() == 1 ? v[0] : v[i]; }

template <class Fwd>
std::vector<double> binary_forward(const Tensor& a, const Tensor& b, std::size_t n, Fwd fwd) {
  const auto& av = vals(a);
  const auto& bv = vals(b);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(bval(av, i), bval(bv, i));
  return out;
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, std::string_view name, Fwd fwd, Bwd dydx) {
  const auto& av = vals(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return OpBuilder::make(a.shape(), std::move(out), name, {a}, [a, dydx](const TensorImpl& o) {
    const auto& x = vals(a);
    accumulate(a, o.grad.size(), [&](std::size_t i) { return o.grad[i] * dydx(x[i], o.data[i]); });
  });
}

}  // namespace

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "add");
  const std::size_t n = shape_numel(shape);
  auto out = binary_forward(a, b, n, [](double x, double y) { return x + y; });
  return OpBuilder::make(std::move(shape), std::move(out), "add", {a, b},
                         [a, b](const TensorImpl& o) {
                           accumulate(a, o.grad.size(), [&](std::size_t i) { return o.grad[i]; });
                           accumulate(b, o.grad.size(), [&](std::size_t i) { return o.grad[i]; });
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "sub");
  const std::size_t n = shape_numel(shape);
  auto out = binary_forward(a, b, n, [](double x, double y) { return x - y; });
  return OpBuilder::make(std::move(shape), std::move(out), "sub", {a, b},
                         [a, b](const TensorImpl& o) {
                           accumulate(a, o.grad.size(), [&](std::size_t i) { return o.grad[i]; });
                           accumulate(b, o.grad.size(), [&](std::size_t i) { return -o.grad[i]; });
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "mul");
  const std::size_t n = shape_numel(shape);
  std::vector<double> out;
  if (a.numel() == n && b.numel() == n) {
    out.resize(n);
    kernels::active().hadamard(vals(a).data(), vals(b).data(), out.data(), n);
  } else {
    out = binary_forward(a, b, n, [](double x, double y) { return x * y; });
  }
  return OpBuilder::make(std::move(shape), std::move(out), "mul", {a, b},
                         [a, b](const TensorImpl& o) {
                           const auto& av = vals(a);
                           const auto& bv = vals(b);
                           accumulate(a, o.grad.size(),
                                      [&](std::size_t i) { return o.grad[i] * bval(bv, i); });
                           accumulate(b, o.grad.size(),
                                      [&](std::size_t i) { return o.grad[i] * bval(av, i); });
                         });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "div");
  for (double v : vals(b))
    if (v == 0.0) throw NumericError("div: division by zero");
  const std::size_t n = shape_numel(shape);
  auto out = binary_forward(a, b, n, [](double x, double y) { return x / y; });
  return OpBuilder::make(std::move(shape), std::move(out), "div", {a, b},
                         [a, b](const TensorImpl& o) {
                           const auto& bv = vals(b);
                           accumulate(a, o.grad.size(),
                                      [&](std::size_t i) { return o.grad[i] / bval(bv, i); });
                           accumulate(b, o.grad.size(), [&](std::size_t i) {
                             return -o.grad[i] * o.data[i] / bval(bv, i);
                           });
                         });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : vals(a))
    if (!(v > 0.0)) throw NumericError("log: argument must be strictly positive, got " + std::to_string(v));
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor power(const Tensor& a, double p) {
  const bool integral = std::floor(p) == p;
  for (double v : vals(a)) {
    if (v < 0.0 && !integral) throw NumericError("power: negative base with non-integer exponent");
    if (v == 0.0 && p < 0.0) throw NumericError("power: zero base with negative exponent");
  }
  return unary(
      a, "power", [p](double x) { return std::pow(x, p); },
      [p](double x, double) {
        if (x == 0.0 && p < 1.0) return 0.0;
        return p * std::pow(x, p - 1.0);
      });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(a, "clamp_min", [floor](double x) { return std::max(x, floor); },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : vals(a)) s += v;
  return OpBuilder::make({1}, {s}, "sum", {a}, [a](const TensorImpl& o) {
    accumulate(a, a.numel(), [&](std::size_t) { return o.grad[0]; });
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : vals(a)) s += v;
  return OpBuilder::make({1}, {s / n}, "mean", {a}, [a, n](const TensorImpl& o) {
    accumulate(a, a.numel(), [&](std::size_t) { return o.grad[0] / n; });
  });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size())
    throw DimensionError("reduction axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.reduced.push_back(s[i]);
  if (r.reduced.empty()) r.reduced.push_back(1);
  return r;
}

Tensor reduce_axis(const Tensor& a, std::size_t axis, bool average) {
  const AxisSplit sp = split_axis(a, axis);
  const double div = average ? static_cast<double>(sp.extent) : 1.0;
  const auto& av = vals(a);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      double s = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) s += av[(o * sp.extent + k) * sp.inner + in];
      out[o * sp.inner + in] = s / div;
    }
  return OpBuilder::make(sp.reduced, std::move(out), average ? "mean_axis" : "sum_axis", {a},
                         [a, sp, div](const TensorImpl& o) {
                           if (!OpBuilder::wants_grad(a)) return;
                           auto& g = OpBuilder::grad_buffer(a);
                           for (std::size_t ou = 0; ou < sp.outer; ++ou)
                             for (std::size_t k = 0; k < sp.extent; ++k)
                               for (std::size_t in = 0; in < sp.inner; ++in)
                                 g[(ou * sp.extent + k) * sp.inner + in] +=
                                     o.grad[ou * sp.inner + in] / div;
                         });
}

}  // namespace

Tensor sum(const Tensor& a, std::size_t axis) { return reduce_axis(a, axis, false); }
Tensor mean(const Tensor& a, std::size_t axis) { return reduce_axis(a, axis, true); }

// ---- linear algebra and shape ------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::active().gemm_nn(vals(a).data(), vals(b).data(), out.data(), m, k, n);
  return OpBuilder::make({m, n}, std::move(out), "matmul", {a, b},
                         [a, b, m, k, n](const TensorImpl& o) {
                           const auto& kt = kernels::active();
                           if (OpBuilder::wants_grad(a)) {
                             std::vector<double> da(m * k);
                             kt.gemm_nt(o.grad.data(), vals(b).data(), da.data(), m, n, k);
                             kt.axpy(1.0, da.data(), OpBuilder::grad_buffer(a).data(), m * k);
                           }
                           if (OpBuilder::wants_grad(b)) {
                             std::vector<double> db(k * n);
                             kt.gemm_tn(vals(a).data(), o.grad.data(), db.data(), k, m, n);
                             kt.axpy(1.0, db.data(), OpBuilder::grad_buffer(b).data(), k * n);
                           }
                         });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& av = vals(a);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return OpBuilder::make({c, r}, std::move(out), "transpose", {a}, [a, r, c](const TensorImpl& o) {
    if (!OpBuilder::wants_grad(a)) return;
    auto& g = OpBuilder::grad_buffer(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  return OpBuilder::make(std::move(shape), vals(a), "reshape", {a}, [a](const TensorImpl& o) {
    accumulate(a, o.grad.size(), [&](std::size_t i) { return o.grad[i]; });
  });
}

Tensor add_bias(const Tensor& t, const Tensor& bias) {
  require_matrix(t, "add_bias");
  if (bias.numel() != t.dim(1))
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(t.shape()));
  const std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out = vals(t);
  const auto& bv = vals(bias);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return OpBuilder::make(t.shape(), std::move(out), "add_bias", {t, bias},
                         [t, bias, r, c](const TensorImpl& o) {
                           accumulate(t, o.grad.size(), [&](std::size_t i) { return o.grad[i]; });
                           if (!OpBuilder::wants_grad(bias)) return;
                           auto& g = OpBuilder::grad_buffer(bias);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[i * c + j];
                         });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.dim(0))
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  const auto& av = vals(a);
  std::vector<double> out(av.begin() + begin * row, av.begin() + end * row);
  return OpBuilder::make(std::move(shape), std::move(out), "slice_rows", {a},
                         [a, begin, row](const TensorImpl& o) {
                           if (!OpBuilder::wants_grad(a)) return;
                           auto& g = OpBuilder::grad_buffer(a);
                           for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * row + i] += o.grad[i];
                         });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  Shape tail(shape.begin() + 1, shape.end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw DimensionError("concat_rows: " + shape_str(p.shape()) + " does not match " + shape_str(shape));
    rows += p.dim(0);
    out.insert(out.end(), vals(p).begin(), vals(p).end());
  }
  shape[0] = rows;
  return OpBuilder::make(std::move(shape), std::move(out), "concat_rows", parts,
                         [parts](const TensorImpl& o) {
                           std::size_t offset = 0;
                           for (const Tensor& p : parts) {
                             const std::size_t n = p.numel();
                             if (OpBuilder::wants_grad(p)) {
                               auto& g = OpBuilder::grad_buffer(p);
                               for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
                             }
                             offset += n;
                           }
                         });
}

Tensor pick(const Tensor& a, std::span<const int> index) {
  require_matrix(a, "pick");
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (index.size() != r)
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " + std::to_string(r) + " rows");
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= c)
      throw ArgumentError("pick: index " + std::to_string(idx[i]) + " out of range [0, " +
                          std::to_string(c) + ") at row " + std::to_string(i));
    out[i] = vals(a)[i * c + idx[i]];
  }
  return OpBuilder::make({r}, std::move(out), "pick", {a}, [a, idx, c](const TensorImpl& o) {
    if (!OpBuilder::wants_grad(a)) return;
    auto& g = OpBuilder::grad_buffer(a);
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + idx[i]] += o.grad[i];
  });
}

Tensor l2_normalize_rows(const Tensor& a, double epsilon, std::vector<std::size_t>* degenerate_rows) {
  require_matrix(a, "l2_normalize_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& av = vals(a);
  std::vector<double> out(av.size());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[i * c + j] * av[i * c + j];
    norms[i] = std::sqrt(s);
    const bool degenerate = norms[i] < epsilon;
    if (degenerate && degenerate_rows) degenerate_rows->push_back(i);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = degenerate ? av[i * c + j] : av[i * c + j] / norms[i];
  }
  return OpBuilder::make(a.shape(), std::move(out), "l2_normalize_rows", {a},
                         [a, norms, epsilon, r, c](const TensorImpl& o) {
                           if (!OpBuilder::wants_grad(a)) return;
                           auto& g = OpBuilder::grad_buffer(a);
                           for (std::size_t i = 0; i < r; ++i) {
                             const double* y = &o.data[i * c];
                             const double* gy = &o.grad[i * c];
                             if (norms[i] < epsilon) {
                               for (std::size_t j = 0; j < c; ++j) g[i * c + j] += gy[j];
                               continue;
                             }
                             double dot = 0.0;
                             for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                             for (std::size_t j = 0; j < c; ++j)
                               g[i * c + j] += (gy[j] - y[j] * dot) / norms[i];
                           }
                         });
}

Tensor softmax_rows(const Tensor& a) {
  require_matrix(a, "softmax_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& av = vals(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double mx = *std::max_element(av.begin() + i * c, av.begin() + (i + 1) * c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(av[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return OpBuilder::make(a.shape(), std::move(out), "softmax_rows", {a}, [a, r, c](const TensorImpl& o) {
    if (!OpBuilder::wants_grad(a)) return;
    auto& g = OpBuilder::grad_buffer(a);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += o.grad[i * c + j] * o.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.data[i * c + j] * (o.grad[i * c + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_matrix(a, "log_softmax_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& av = vals(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double mx = *std::max_element(av.begin() + i * c, av.begin() + (i + 1) * c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(av[i * c + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] - lse;
  }
  return OpBuilder::make(a.shape(), std::move(out), "log_softmax_rows", {a}, [a, r, c](const TensorImpl& o) {
    if (!OpBuilder::wants_grad(a)) return;
    auto& g = OpBuilder::grad_buffer(a);
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += o.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i * c + j] - std::exp(o.data[i * c + j]) * gs;
    }
  });
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  require_matrix(a, "pairwise_sqdist");
  require_matrix(b, "pairwise_sqdist");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("pairwise_sqdist: row dims differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<double> out(n * m);
  kernels::active().pairwise_sqdist(vals(a).data(), vals(b).data(), out.data(), n, m, d);
  return OpBuilder::make({n, m}, std::move(out), "pairwise_sqdist", {a, b},
                         [a, b, n, m, d](const TensorImpl& o) {
                           const auto& av = vals(a);
                           const auto& bv = vals(b);
                           const bool ga = OpBuilder::wants_grad(a), gb = OpBuilder::wants_grad(b);
                           std::vector<double>* gA = ga ? &OpBuilder::grad_buffer(a) : nullptr;
                           std::vector<double>* gB = gb ? &OpBuilder::grad_buffer(b) : nullptr;
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < m; ++j) {
                               const double w = 2.0 * o.grad[i * m + j];
                               if (w == 0.0) continue;
                               for (std::size_t k = 0; k < d; ++k) {
                                 const double diff = av[i * d + k] - bv[j * d + k];
                                 if (gA) (*gA)[i * d + k] += w * diff;
                                 if (gB) (*gB)[j * d + k] -= w * diff;
                               }
                             }
                         });
}

// ---- gradient routing --------------------------------------------------------

Tensor stop_gradient(const Tensor& a) { return a.detach(); }

Tensor gradient_scale(const Tensor& a, double factor) {
  return OpBuilder::make(a.shape(), vals(a), "gradient_scale", {a}, [a, factor](const TensorImpl& o) {
    accumulate(a, o.grad.size(), [&](std::size_t i) { return factor * o.grad[i]; });
  });
}

}  // namespace pedcc
