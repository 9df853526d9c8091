// SPDX-License-Identifier: Apache-2.0
/**
 * @file   warp.hpp
 * @brief  Sub-pixel bilinear sampling and feature-map warping by a
 *         channel-shared displacement field.
 *
 * A displacement field is a (B, H, W, 2) tensor in pixels with component 0
 * the row offset and component 1 the column offset. Sample coordinates are
 * clamped to [0, H-1] x [0, W-1]; along a clamped axis the coordinate
 * gradient is zero.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "gdcunet/autodiff.hpp"

namespace gdc {

template <class T>
using DisplacementField = Tensor<T>;

namespace detail {

template <class T>
struct BilinearTap {
  std::size_t r0, r1, c0, c1;
  T fr, fc;
  bool row_clamped, col_clamped;
};

template <class T>
BilinearTap<T> bilinear_tap(std::size_t height, std::size_t width, T row, T col) {
  BilinearTap<T> t{};
  const T rmax = T(height - 1), cmax = T(width - 1);
  t.row_clamped = !(row >= T(0) && row <= rmax);
  t.col_clamped = !(col >= T(0) && col <= cmax);
  const T r = std::clamp(row, T(0), rmax);
  const T c = std::clamp(col, T(0), cmax);
  t.r0 = std::min(static_cast<std::size_t>(std::floor(r)), height - 1);
  t.c0 = std::min(static_cast<std::size_t>(std::floor(c)), width - 1);
  t.r1 = std::min(t.r0 + 1, height - 1);
  t.c1 = std::min(t.c0 + 1, width - 1);
  t.fr = r - T(t.r0);
  t.fc = c - T(t.c0);
  return t;
}

inline void require_field_shape(const Shape& x, const Shape& f) {
  if (f.b != x.b || f.h != x.h || f.w != x.w || f.c != 2)
    throw ShapeError("warp: field " + f.str() + " does not match tensor " + x.str());
}

}  // namespace detail

/// Bilinear interpolation of channel c at a real-valued (row, col), border-clamped.
template <class T>
T bilinear_sample(const Tensor<T>& x, std::size_t b, T row, T col, std::size_t c) {
  const auto t = detail::bilinear_tap(x.shape().h, x.shape().w, row, col);
  return (1 - t.fr) * (1 - t.fc) * x(b, t.r0, t.c0, c) + (1 - t.fr) * t.fc * x(b, t.r0, t.c1, c) +
         t.fr * (1 - t.fc) * x(b, t.r1, t.c0, c) + t.fr * t.fc * x(b, t.r1, t.c1, c);
}

/// out(p) = x(p + field(p)), the same offset for every channel at p.
template <class T>
Tensor<T> warp_forward(const Tensor<T>& x, const DisplacementField<T>& field) {
  const Shape s = x.shape();
  detail::require_field_shape(s, field.shape());
  Tensor<T> out(s);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xx = 0; xx < s.w; ++xx) {
        const T* d = &field(b, y, xx, 0);
        const auto t = detail::bilinear_tap(s.h, s.w, T(y) + d[0], T(xx) + d[1]);
        const T w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc,
                w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
        const T* p00 = &x(b, t.r0, t.c0, 0);
        const T* p01 = &x(b, t.r0, t.c1, 0);
        const T* p10 = &x(b, t.r1, t.c0, 0);
        const T* p11 = &x(b, t.r1, t.c1, 0);
        T* o = &out(b, y, xx, 0);
        for (std::size_t c = 0; c < s.c; ++c)
          o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
  return out;
}

/// Gradients of warp_forward with respect to the feature map and the field.
template <class T>
std::pair<Tensor<T>, DisplacementField<T>> warp_backward(const Tensor<T>& upstream,
                                                         const Tensor<T>& x,
                                                         const DisplacementField<T>& field) {
  const Shape s = x.shape();
  detail::require_field_shape(s, field.shape());
  require_same_shape(upstream.shape(), s, "warp_backward");
  Tensor<T> gx(s);
  DisplacementField<T> gf(field.shape());
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xx = 0; xx < s.w; ++xx) {
        const T* d = &field(b, y, xx, 0);
        const auto t = detail::bilinear_tap(s.h, s.w, T(y) + d[0], T(xx) + d[1]);
        const T w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc,
                w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
        const std::size_t o00 = x.offset(b, t.r0, t.c0, 0), o01 = x.offset(b, t.r0, t.c1, 0),
                          o10 = x.offset(b, t.r1, t.c0, 0), o11 = x.offset(b, t.r1, t.c1, 0);
        const T* g = &upstream(b, y, xx, 0);
        T drow = 0, dcol = 0;
        for (std::size_t c = 0; c < s.c; ++c) {
          const T gv = g[c];
          gx[o00 + c] += w00 * gv;
          gx[o01 + c] += w01 * gv;
          gx[o10 + c] += w10 * gv;
          gx[o11 + c] += w11 * gv;
          const T v00 = x[o00 + c], v01 = x[o01 + c], v10 = x[o10 + c], v11 = x[o11 + c];
          drow += gv * ((1 - t.fc) * (v10 - v00) + t.fc * (v11 - v01));
          dcol += gv * ((1 - t.fr) * (v01 - v00) + t.fr * (v11 - v10));
        }
        T* gd = &gf(b, y, xx, 0);
        gd[0] = t.row_clamped ? T(0) : drow;
        gd[1] = t.col_clamped ? T(0) : dcol;
      }
  return {std::move(gx), std::move(gf)};
}

/// Differentiable warp in both arguments.
template <class T>
Var<T> warp(const Var<T>& x, const Var<T>& field) {
  return make_op<T>("warp", warp_forward(x.value(), field.value()), {x, field}, [](Node<T>& n) {
    auto [gx, gf] = warp_backward(n.grad, n.input(0), n.input(1));
    if (n.wants_grad(0)) n.input_grad(0) += gx;
    if (n.wants_grad(1)) n.input_grad(1) += gf;
  });
}

}  // namespace gdc
