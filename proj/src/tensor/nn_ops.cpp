#include <cmath>

#include "impl.hpp"
#include "pedcc/errors.hpp"
#include "pedcc/kernels.hpp"

namespace pedcc {

using detail::TensorImpl;

namespace {

const std::vector<double>& vals(const Tensor& t) { return OpBuilder::impl(t).data; }

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

// cols[(ci·kh + ky)·kw + kx][oy·ow + ox] for one sample.
void im2col(const double* x, const ConvGeom& g, double* cols) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? x[(ci * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(ci * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1))
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
             stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const auto& kt = kernels::active();
  const std::size_t in_sz = g.c * g.h * g.w, out_sz = g.o * g.pixels();
  std::vector<double> out(g.n * out_sz);
  std::vector<double> cols(g.patch() * g.pixels());
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(vals(x).data() + s * in_sz, g, cols.data());
    kt.gemm_nn(vals(weight).data(), cols.data(), out.data() + s * out_sz, g.o, g.patch(), g.pixels());
  }
  return OpBuilder::make({g.n, g.o, g.oh, g.ow}, std::move(out), "conv2d", {x, weight},
                         [x, weight, g, in_sz, out_sz](const TensorImpl& o) {
                           const auto& kt = kernels::active();
                           const bool gx = OpBuilder::wants_grad(x), gw = OpBuilder::wants_grad(weight);
                           std::vector<double> cols(g.patch() * g.pixels());
                           std::vector<double> tmp_w(g.o * g.patch());
                           for (std::size_t s = 0; s < g.n; ++s) {
                             const double* dout = o.grad.data() + s * out_sz;
                             if (gw) {
                               im2col(vals(x).data() + s * in_sz, g, cols.data());
                               kt.gemm_nt(dout, cols.data(), tmp_w.data(), g.o, g.pixels(), g.patch());
                               kt.axpy(1.0, tmp_w.data(), OpBuilder::grad_buffer(weight).data(), tmp_w.size());
                             }
                             if (gx) {
                               kt.gemm_tn(vals(weight).data(), dout, cols.data(), g.patch(), g.o, g.pixels());
                               col2im_add(cols.data(), g, OpBuilder::grad_buffer(x).data() + s * in_sz);
                             }
                           }
                         });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool needs NCHW input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto& xv = vals(x);
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += xv[i * hw + p];
    out[i] = s / static_cast<double>(hw);
  }
  return OpBuilder::make({n, c}, std::move(out), "global_avg_pool", {x}, [x, n, c, hw](const TensorImpl& o) {
    if (!OpBuilder::wants_grad(x)) return;
    auto& g = OpBuilder::grad_buffer(x);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t p = 0; p < hw; ++p) g[i * hw + p] += o.grad[i] / static_cast<double>(hw);
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  if (x.rank() != 2 && x.rank() != 4)
    throw DimensionError("batch_norm needs [N×C] or [N×C×H×W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c)
    throw DimensionError("batch_norm: parameter sizes do not match " + std::to_string(c) + " channels");
  const double count = static_cast<double>(n * inner);
  if (training && n * inner < 2) throw ArgumentError("batch_norm: training needs at least 2 values per channel");

  const auto& xv = vals(x);
  auto at = [c, inner](std::size_t s, std::size_t ch, std::size_t p) { return (s * c + ch) * inner + p; };

  std::vector<double> mu(c), inv_std(c);
  if (training) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < inner; ++p) s += xv[at(b, ch, p)];
      mu[ch] = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < inner; ++p) {
          const double d = xv[at(b, ch, p)] - mu[ch];
          v += d * d;
        }
      v /= count;
      inv_std[ch] = 1.0 / std::sqrt(v + state.epsilon);
      rm[ch] = state.momentum * rm[ch] + (1.0 - state.momentum) * mu[ch];
      rv[ch] = state.momentum * rv[ch] + (1.0 - state.momentum) * v * count / (count - 1.0);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean.at(ch);
      inv_std[ch] = 1.0 / std::sqrt(state.running_var.at(ch) + state.epsilon);
    }
  }

  std::vector<double> xhat(xv.size()), out(xv.size());
  const auto& gv = vals(gamma);
  const auto& bv = vals(beta);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < inner; ++p) {
        const std::size_t i = at(b, ch, p);
        xhat[i] = (xv[i] - mu[ch]) * inv_std[ch];
        out[i] = gv[ch] * xhat[i] + bv[ch];
      }

  return OpBuilder::make(
      x.shape(), std::move(out), training ? "batch_norm_train" : "batch_norm_eval", {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, n, c, inner, count, training, at](const TensorImpl& o) {
        const auto& gv = vals(gamma);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < inner; ++p) {
              const std::size_t i = at(b, ch, p);
              sum_g += o.grad[i];
              sum_gx += o.grad[i] * xhat[i];
            }
          if (OpBuilder::wants_grad(gamma)) OpBuilder::grad_buffer(gamma)[ch] += sum_gx;
          if (OpBuilder::wants_grad(beta)) OpBuilder::grad_buffer(beta)[ch] += sum_g;
          if (!OpBuilder::wants_grad(x)) continue;
          auto& gx = OpBuilder::grad_buffer(x);
          const double k = gv[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < inner; ++p) {
              const std::size_t i = at(b, ch, p);
              gx[i] += training ? k * (o.grad[i] - sum_g / count - xhat[i] * sum_gx / count) : k * o.grad[i];
            }
        }
      });
}

}  // namespace pedcc
