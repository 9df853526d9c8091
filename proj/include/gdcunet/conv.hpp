// SPDX-License-Identifier: Apache-2.0
/**
 * @file   conv.hpp
 * @brief  Dilated sampling grid and same-padded, stride-1 2-D convolution.
 *
 * Weights are laid out (Ks, Ks, Cin, Cout) so that for a fixed tap the
 * (Cin x Cout) block is a plain matrix. Reads outside the image are zero.
 */
#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "gdcunet/autodiff.hpp"
#include "gdcunet/kernels.hpp"

namespace gdc {

struct GridSpec {
  int kernel_size = 3;
  int dilation = 1;

  GridSpec() = default;
  GridSpec(int ks, int ds) : kernel_size(ks), dilation(ds) { validate(); }

  int radius() const { return (kernel_size - 1) / 2; }

  void validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw ConfigError("GridSpec: kernel size must be odd and positive, got " +
                        std::to_string(kernel_size));
    if (dilation < 1)
      throw ConfigError("GridSpec: dilation must be >= 1, got " + std::to_string(dilation));
  }
};

/// Tap offsets (row, col) = (i * Ds, j * Ds) for i, j in [-r, r], row-major.
inline std::vector<std::pair<int, int>> make_grid(const GridSpec& spec) {
  spec.validate();
  const int r = spec.radius();
  std::vector<std::pair<int, int>> grid;
  grid.reserve(static_cast<std::size_t>(spec.kernel_size) * spec.kernel_size);
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) grid.emplace_back(i * spec.dilation, j * spec.dilation);
  return grid;
}

template <class T>
struct ConvKernel {
  Var<T> weight;  // (Ks, Ks, Cin, Cout)
  Var<T> bias;    // (1, 1, 1, Cout)

  std::size_t in_channels() const { return weight.shape().w; }
  std::size_t out_channels() const { return weight.shape().c; }
  int kernel_size() const { return static_cast<int>(weight.shape().b); }
};

namespace detail {

struct TapRange {
  int dy, dx;
  std::size_t x_begin, x_end;  // valid output columns for this tap
};

inline std::vector<TapRange> tap_ranges(const GridSpec& spec, std::size_t width) {
  std::vector<TapRange> taps;
  const int w = static_cast<int>(width);
  for (auto [dy, dx] : make_grid(spec)) {
    const int lo = std::max(0, -dx), hi = std::min(w, w - dx);
    taps.push_back({dy, dx, static_cast<std::size_t>(std::max(lo, 0)),
                    static_cast<std::size_t>(std::max(hi, lo))});
  }
  return taps;
}

/// Rows are output pixels of image b, columns (tap, input channel); taps
/// falling outside the image read zero.
template <class T>
void im2col(const Tensor<T>& x, std::size_t b, const std::vector<TapRange>& taps, T* col) {
  const Shape s = x.shape();
  const std::size_t cin = s.c, k = taps.size() * cin;
  const int height = static_cast<int>(s.h);
  std::fill(col, col + s.h * s.w * k, T(0));
  for (std::size_t oy = 0; oy < s.h; ++oy)
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const int iy = static_cast<int>(oy) + taps[t].dy;
      if (iy < 0 || iy >= height) continue;
      const T* xrow = &x(b, static_cast<std::size_t>(iy), 0, 0);
      for (std::size_t ox = taps[t].x_begin; ox < taps[t].x_end; ++ox)
        std::copy_n(xrow + (ox + taps[t].dx) * cin, cin, col + (oy * s.w + ox) * k + t * cin);
    }
}

/// Adjoint of im2col: scatter-adds column gradients into gx for image b.
template <class T>
void col2im(const T* col, std::size_t b, const std::vector<TapRange>& taps, Tensor<T>& gx) {
  const Shape s = gx.shape();
  const std::size_t cin = s.c, k = taps.size() * cin;
  const int height = static_cast<int>(s.h);
  for (std::size_t oy = 0; oy < s.h; ++oy)
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const int iy = static_cast<int>(oy) + taps[t].dy;
      if (iy < 0 || iy >= height) continue;
      T* grow = &gx(b, static_cast<std::size_t>(iy), 0, 0);
      for (std::size_t ox = taps[t].x_begin; ox < taps[t].x_end; ++ox) {
        const T* c = col + (oy * s.w + ox) * k + t * cin;
        T* g = grow + (ox + taps[t].dx) * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) g[ci] += c[ci];
      }
    }
}

inline bool is_pointwise(const GridSpec& spec) { return spec.kernel_size == 1; }

template <class T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                    const GridSpec& spec, Tensor<T>& y) {
  const Shape s = x.shape();
  const std::size_t cout = w.shape().c, pixels = s.h * s.w;
  const auto taps = tap_ranges(spec, s.w);
  const std::size_t k = taps.size() * s.c;
  for (std::size_t p = 0; p < s.b * pixels; ++p)
    std::copy_n(bias.data(), cout, y.data() + p * cout);
  if (is_pointwise(spec)) {
    kernels::gemm_nn(s.b * pixels, cout, k, x.data(), w.data(), y.data());
    return;
  }
  std::vector<T> col(pixels * k);
  for (std::size_t b = 0; b < s.b; ++b) {
    im2col(x, b, taps, col.data());
    kernels::gemm_nn(pixels, cout, k, col.data(), w.data(), y.data() + b * pixels * cout);
  }
}

template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                     const GridSpec& spec, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const Shape s = x.shape();
  const std::size_t cout = w.shape().c, pixels = s.h * s.w;
  const auto taps = tap_ranges(spec, s.w);
  const std::size_t k = taps.size() * s.c;
  if (is_pointwise(spec)) {
    if (gw) kernels::gemm_tn(s.b * pixels, cout, k, x.data(), gy.data(), gw->data());
    if (gx) kernels::gemm_nt(s.b * pixels, k, cout, gy.data(), w.data(), gx->data());
  } else if (gw || gx) {
    std::vector<T> col(pixels * k);
    for (std::size_t b = 0; b < s.b; ++b) {
      const T* g = gy.data() + b * pixels * cout;
      if (gw) {
        im2col(x, b, taps, col.data());
        kernels::gemm_tn(pixels, cout, k, col.data(), g, gw->data());
      }
      if (gx) {
        std::fill(col.begin(), col.end(), T(0));
        kernels::gemm_nt(pixels, k, cout, g, w.data(), col.data());
        col2im(col.data(), b, taps, *gx);
      }
    }
  }
  if (gb) {
    for (std::size_t p = 0; p < s.b * pixels; ++p)
      for (std::size_t co = 0; co < cout; ++co) (*gb)[co] += gy[p * cout + co];
  }
}

}  // namespace detail

/// y(p0) = bias + sum over taps pn of w(pn) x(p0 + pn), zero outside the image.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const GridSpec& spec) {
  spec.validate();
  const Shape sx = x.shape(), sw = weight.shape();
  const auto ks = static_cast<std::size_t>(spec.kernel_size);
  if (sw.b != ks || sw.h != ks)
    throw ShapeError("conv2d: kernel extents " + sw.str() + " do not match Ks=" +
                     std::to_string(ks));
  if (sx.c != sw.w)
    throw ShapeError("conv2d: input has " + std::to_string(sx.c) + " channels, kernel expects " +
                     std::to_string(sw.w));
  if (bias.shape() != Shape{1, 1, 1, sw.c})
    throw ShapeError("conv2d: bias shape " + bias.shape().str());
  Tensor<T> y(Shape{sx.b, sx.h, sx.w, sw.c});
  detail::conv2d_forward(x.value(), weight.value(), bias.value(), spec, y);
  return make_op<T>("conv2d", std::move(y), {x, weight, bias}, [spec](Node<T>& n) {
    detail::conv2d_backward(n.input(0), n.input(1), n.grad, spec,
                            n.wants_grad(0) ? &n.input_grad(0) : nullptr,
                            n.wants_grad(1) ? &n.input_grad(1) : nullptr,
                            n.wants_grad(2) ? &n.input_grad(2) : nullptr);
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const ConvKernel<T>& k, const GridSpec& spec) {
  return conv2d(x, k.weight, k.bias, spec);
}

}  // namespace gdc
