// SPDX-License-Identifier: Apache-2.0
/**
 * @file   losses.hpp
 * @brief  Binary masks, logit thresholding and the BCE + Dice training loss.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdcunet/autodiff.hpp"

namespace gdc {

class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// H x W mask with values in {0, 1}.
struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
  BinaryMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> values)
      : height(h), width(w), data(std::move(values)) {
    if (data.size() != h * w) throw ShapeError("BinaryMask: value count does not match extents");
    for (auto v : data)
      if (v > 1) throw ValidationError("BinaryMask: values must be 0 or 1");
  }

  std::uint8_t operator()(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::uint8_t& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

  /// (1, H, W, 1) tensor of 0/1 values.
  template <class T>
  Tensor<T> to_tensor() const {
    Tensor<T> t(Shape{1, height, width, 1});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = T(data[i]);
    return t;
  }
};

/// Mask of batch item b: 1 where sigmoid(logit) > 0.5, i.e. logit > 0.
template <class T>
BinaryMask threshold(const Tensor<T>& logits, std::size_t b = 0) {
  const Shape s = logits.shape();
  if (s.c != 1) throw ShapeError("threshold: expected a single-channel logit map");
  BinaryMask m(s.h, s.w);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) m(y, x) = logits(b, y, x, 0) > T(0) ? 1 : 0;
  return m;
}

struct LossConfig {
  double bce_weight = 0.5;
  double epsilon = 1e-5;

  void validate() const {
    if (!(epsilon > 0)) throw ConfigError("LossConfig: epsilon must be positive");
    if (!(bce_weight >= 0)) throw ConfigError("LossConfig: bce_weight must be non-negative");
  }
};

namespace detail {
template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

/// bce_weight * BCE + Dice on logits of shape (B, H, W, 1).
///
/// BCE is the mean over all B*H*W pixels (log-sum-exp form). Dice is
/// 1 - (2 sum(s y) + eps) / (sum(s) + sum(y) + eps) with s = sigmoid(logit),
/// evaluated per image and averaged over the batch; for B = 1 both reduce to
/// sums over the N = H*W pixels of the image.
template <class T>
Var<T> bce_dice_loss(const Var<T>& logits, const Tensor<T>& targets, const LossConfig& cfg = {}) {
  cfg.validate();
  const Shape s = logits.shape();
  require_same_shape(s, targets.shape(), "bce_dice_loss");
  if (s.c != 1) throw ShapeError("bce_dice_loss: logits must have one channel");
  for (T y : targets.values())
    if (y != T(0) && y != T(1)) throw ValidationError("bce_dice_loss: targets must be binary");

  const std::size_t batch = s.b, n = s.h * s.w;
  const T eps = T(cfg.epsilon), wbce = T(cfg.bce_weight);
  const T* p = logits.value().data();
  const T* y = targets.data();

  T bce = 0, dice = 0;
  std::vector<T> inter(batch, 0), denom(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    T si = 0, ss = 0, sy = 0;
    for (std::size_t i = b * n; i < (b + 1) * n; ++i) {
      const T x = p[i];
      bce += std::max(x, T(0)) - x * y[i] + std::log1p(std::exp(-std::abs(x)));
      const T sg = detail::sigmoid(x);
      si += sg * y[i];
      ss += sg;
      sy += y[i];
    }
    inter[b] = si;
    denom[b] = ss + sy + eps;
    dice += T(1) - (T(2) * si + eps) / denom[b];
  }
  const T total_pixels = T(batch * n);
  const T loss = wbce * bce / total_pixels + dice / T(batch);

  return make_op<T>("bce_dice_loss", Tensor<T>(Shape{1, 1, 1, 1}, loss), {logits},
                    [targets, batch, n, eps, wbce, total_pixels, inter = std::move(inter),
                     denom = std::move(denom)](Node<T>& node) {
    const T g = node.grad[0];
    const T* p = node.input(0).data();
    const T* y = targets.data();
    T* gp = node.input_grad(0).data();
    for (std::size_t b = 0; b < batch; ++b) {
      const T num = T(2) * inter[b] + eps;
      const T den2 = denom[b] * denom[b];
      for (std::size_t i = b * n; i < (b + 1) * n; ++i) {
        const T sg = detail::sigmoid(p[i]);
        const T d_bce = wbce * (sg - y[i]) / total_pixels;
        const T d_dice_ds = -(T(2) * y[i] * denom[b] - num) / den2 / T(batch);
        gp[i] += g * (d_bce + d_dice_ds * sg * (T(1) - sg));
      }
    }
  });
}

}  // namespace gdc
