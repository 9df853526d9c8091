// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Elementary differentiable operations on Var.
 *
 * Linear maps act on the last (channel) extent and treat every leading index
 * as a row, so a B x H x W x C feature map and a B x N x 1 x C token matrix
 * go through the same code.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "gdcunet/autodiff.hpp"
#include "gdcunet/kernels.hpp"

namespace gdc {

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t i = 0; i < 2; ++i)
      if (n.wants_grad(i)) n.input_grad(i) += n.grad;
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& n) {
    const auto& g = n.grad;
    if (n.wants_grad(0)) {
      auto& ga = n.input_grad(0);
      const auto& bv = n.input(1);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (n.wants_grad(1)) {
      auto& gb = n.input_grad(1);
      const auto& av = n.input(0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_op<T>("scale", std::move(out), {a}, [s](Node<T>& n) {
    auto& ga = n.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * n.grad[i];
  });
}

/// Scalar (1x1x1x1) sum of all elements.
template <class T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return make_op<T>("sum", Tensor<T>(Shape{1, 1, 1, 1}, acc), {a}, [](Node<T>& n) {
    const T g = n.grad[0];
    for (auto& v : n.input_grad(0).values()) v += g;
  });
}

/// Elementwise weighted sum to a scalar: sum_i w_i a_i. Used to probe gradients.
template <class T>
Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& w) {
  require_same_shape(a.shape(), w.shape(), "weighted_sum");
  T acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * a.value()[i];
  return make_op<T>("weighted_sum", Tensor<T>(Shape{1, 1, 1, 1}, acc), {a}, [w](Node<T>& n) {
    const T g = n.grad[0];
    auto& ga = n.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * w[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_op<T>("relu", std::move(out), {a}, [](Node<T>& n) {
    auto& ga = n.input_grad(0);
    const auto& y = n.value;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (y[i] > T(0)) ga[i] += n.grad[i];
  });
}

/// Gaussian error linear unit, exact erf form.
template <class T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out = a.value();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return make_op<T>("gelu", std::move(out), {a}, [inv_sqrt2](Node<T>& n) {
    auto& ga = n.input_grad(0);
    const auto& x = n.input(0);
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
      ga[i] += n.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

/// View with a new shape of equal element count.
template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  return make_op<T>("reshape", a.value().reshaped(s), {a}, [](Node<T>& n) {
    auto& ga = n.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
  });
}

/// Matrix product of (1,1,n,k) and (1,1,k,m).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.b != 1 || sa.h != 1 || sb.b != 1 || sb.h != 1)
    throw ShapeError("matmul: operands must be matrices (1,1,rows,cols)");
  if (sa.c != sb.w)
    throw ShapeError("matmul: inner extents disagree " + sa.str() + " * " + sb.str());
  const std::size_t M = sa.w, K = sa.c, N = sb.c;
  Tensor<T> out(Shape{1, 1, M, N});
  kernels::gemm_nn(M, N, K, a.value().data(), b.value().data(), out.data());
  return make_op<T>("matmul", std::move(out), {a, b}, [M, N, K](Node<T>& n) {
    if (n.wants_grad(0))
      kernels::gemm_nt(M, K, N, n.grad.data(), n.input(1).data(), n.input_grad(0).data());
    if (n.wants_grad(1))
      kernels::gemm_tn(M, N, K, n.input(0).data(), n.grad.data(), n.input_grad(1).data());
  });
}

/// y = x W + b over the last extent; W is (1,1,in,out), b is (1,1,1,out).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.b != 1 || sw.h != 1 || sx.c != sw.w)
    throw ShapeError("linear: input " + sx.str() + " incompatible with weight " + sw.str());
  if (bias.shape() != Shape{1, 1, 1, sw.c})
    throw ShapeError("linear: bias shape " + bias.shape().str());
  const std::size_t rows = sx.b * sx.h * sx.w, in = sw.w, outc = sw.c;
  Tensor<T> out(Shape{sx.b, sx.h, sx.w, outc});
  T* y = out.data();
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < outc; ++j) y[r * outc + j] = bv[j];
  kernels::gemm_nn(rows, outc, in, x.value().data(), weight.value().data(), y);
  return make_op<T>("linear", std::move(out), {x, weight, bias}, [rows, in, outc](Node<T>& n) {
    const T* g = n.grad.data();
    if (n.wants_grad(0))
      kernels::gemm_nt(rows, in, outc, g, n.input(1).data(), n.input_grad(0).data());
    if (n.wants_grad(1))
      kernels::gemm_tn(rows, outc, in, n.input(0).data(), g, n.input_grad(1).data());
    if (n.wants_grad(2)) {
      T* gb = n.input_grad(2).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outc; ++j) gb[j] += g[r * outc + j];
    }
  });
}

namespace detail {
template <class T>
using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

// Rows are staged in owned, aligned arrays: Eigen's vectorized exp and sums
// pick a scalar head based on the address, so working on the rows in place
// would tie the rounding to where the allocator put the tensor.
template <class T>
void softmax_rows(std::size_t rows, std::size_t len, T* x) {
  Array<T> buf(kernels::ix(len));
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * len;
    std::copy(row, row + len, buf.data());
    buf = (buf - buf.maxCoeff()).exp();
    buf *= T(1) / buf.sum();
    std::copy(buf.data(), buf.data() + len, row);
  }
}

/// gx += y * (gy - <gy, y>) row by row.
template <class T>
void softmax_rows_backward(std::size_t rows, std::size_t len, const T* y, const T* gy, T* gx) {
  Array<T> yr(kernels::ix(len)), gr(kernels::ix(len));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(y + r * len, y + (r + 1) * len, yr.data());
    std::copy(gy + r * len, gy + (r + 1) * len, gr.data());
    const T dot = (yr * gr).sum();
    yr *= gr - dot;
    T* out = gx + r * len;
    for (std::size_t i = 0; i < len; ++i) out[i] += yr[kernels::ix(i)];
  }
}
}  // namespace detail

/// Max-stabilised softmax over the channel extent.
template <class T>
Var<T> softmax_lastdim(const Var<T>& x) {
  Tensor<T> out = x.value();
  const std::size_t len = out.shape().c;
  if (len == 0) throw ShapeError("softmax_lastdim: empty last extent");
  const std::size_t rows = out.size() / len;
  detail::softmax_rows(rows, len, out.data());
  return make_op<T>("softmax", std::move(out), {x}, [rows, len](Node<T>& n) {
    detail::softmax_rows_backward(rows, len, n.value.data(), n.grad.data(),
                                  n.input_grad(0).data());
  });
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in scan order.
template <class T>
Var<T> maxpool2(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("maxpool2: spatial extents must be even, got " + s.str());
  const Shape so{s.b, s.h / 2, s.w / 2, s.c};
  Tensor<T> out(so);
  std::vector<std::uint32_t> arg(so.numel());
  const auto& xv = x.value();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t oy = 0; oy < so.h; ++oy)
      for (std::size_t ox = 0; ox < so.w; ++ox)
        for (std::size_t c = 0; c < s.c; ++c) {
          std::size_t best = xv.offset(b, 2 * oy, 2 * ox, c);
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = xv.offset(b, 2 * oy + dy, 2 * ox + dx, c);
              if (xv[i] > xv[best]) best = i;
            }
          const std::size_t o = out.offset(b, oy, ox, c);
          out[o] = xv[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
  return make_op<T>("maxpool2", std::move(out), {x}, [arg = std::move(arg)](Node<T>& n) {
    auto& gx = n.input_grad(0);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += n.grad[o];
  });
}

namespace detail {
/// Corner-aligned source coordinates for doubling an axis of length n.
struct UpsampleAxis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

inline UpsampleAxis upsample_axis(std::size_t n) {
  const std::size_t m = 2 * n;
  UpsampleAxis ax{std::vector<std::size_t>(m), std::vector<std::size_t>(m),
                  std::vector<double>(m)};
  const double step = n > 1 ? double(n - 1) / double(m - 1) : 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double src = double(i) * step;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > n - 1) lo = n - 1;
    ax.lo[i] = lo;
    ax.hi[i] = std::min(lo + 1, n - 1);
    ax.frac[i] = src - double(lo);
  }
  return ax;
}
}  // namespace detail

/// Bilinear 2x upsampling with corner alignment: output index i samples source
/// coordinate i * (n - 1) / (2n - 1), so first and last rows/columns coincide.
template <class T>
Var<T> upsample_bilinear2(const Var<T>& x) {
  const Shape s = x.shape();
  const Shape so{s.b, 2 * s.h, 2 * s.w, s.c};
  auto ay = detail::upsample_axis(s.h);
  auto ax = detail::upsample_axis(s.w);
  Tensor<T> out(so);
  const auto& xv = x.value();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t oy = 0; oy < so.h; ++oy) {
      const T fy = T(ay.frac[oy]);
      for (std::size_t ox = 0; ox < so.w; ++ox) {
        const T fx = T(ax.frac[ox]);
        const T w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx),
                w11 = fy * fx;
        const T* p00 = &xv(b, ay.lo[oy], ax.lo[ox], 0);
        const T* p01 = &xv(b, ay.lo[oy], ax.hi[ox], 0);
        const T* p10 = &xv(b, ay.hi[oy], ax.lo[ox], 0);
        const T* p11 = &xv(b, ay.hi[oy], ax.hi[ox], 0);
        T* o = &out(b, oy, ox, 0);
        for (std::size_t c = 0; c < s.c; ++c)
          o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  return make_op<T>(
      "upsample_bilinear2", std::move(out), {x},
      [ay = std::move(ay), ax = std::move(ax), s, so](Node<T>& n) {
        auto& gx = n.input_grad(0);
        for (std::size_t b = 0; b < s.b; ++b)
          for (std::size_t oy = 0; oy < so.h; ++oy) {
            const T fy = T(ay.frac[oy]);
            for (std::size_t ox = 0; ox < so.w; ++ox) {
              const T fx = T(ax.frac[ox]);
              const T w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx),
                      w11 = fy * fx;
              const T* g = &n.grad(b, oy, ox, 0);
              T* g00 = &gx(b, ay.lo[oy], ax.lo[ox], 0);
              T* g01 = &gx(b, ay.lo[oy], ax.hi[ox], 0);
              T* g10 = &gx(b, ay.hi[oy], ax.lo[ox], 0);
              T* g11 = &gx(b, ay.hi[oy], ax.hi[ox], 0);
              for (std::size_t c = 0; c < s.c; ++c) {
                g00[c] += w00 * g[c];
                g01[c] += w01 * g[c];
                g10[c] += w10 * g[c];
                g11[c] += w11 * g[c];
              }
            }
          }
      });
}

}  // namespace gdc
