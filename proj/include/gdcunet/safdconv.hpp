// SPDX-License-Identifier: Apache-2.0
/**
 * @file   safdconv.hpp
 * @brief  Deformable convolution by relative deformation: the input is warped
 *         by its own learned displacement field, then convolved with an
 *         ordinary dilated kernel.
 *
 *   y(p0) = sum_{pn} w(pn) x(p0 + pn + field(p0 + pn))
 *
 * The offset network is sized by the input channels only, so the kernel size
 * and the offset network are independent of each other.
 */
#pragma once

#include <string>

#include "gdcunet/conv.hpp"
#include "gdcunet/offset_network.hpp"
#include "gdcunet/warp.hpp"

namespace gdc {

struct SAFDConvConfig {
  int kernel_size = 3;
  int dilation = 1;
  int embed_multiplier = 1;
  int heads = 4;
  int hidden_dim = 32;
  int in_channels = 2;
  int out_channels = 2;
  bool ff_activation = false;

  GridSpec grid() const { return GridSpec(kernel_size, dilation); }
  OffsetNetConfig offset_config() const {
    return {embed_multiplier, heads, hidden_dim, in_channels, ff_activation};
  }
  void validate() const {
    grid().validate();
    offset_config().validate();
    if (out_channels < 1) throw ConfigError("SAFDConvConfig: out_channels must be positive");
  }

  friend bool operator==(const SAFDConvConfig&, const SAFDConvConfig&) = default;
};

/// The six hyperparameter presets: kernel size, dilation, embedding multiple,
/// heads and feedforward width.
inline SAFDConvConfig safd_setting(int setting, int in_channels = 2, int out_channels = 2) {
  struct Row {
    int ks, ds, e, h, dh;
  };
  static constexpr Row table[6] = {
      {5, 1, 1, 4, 32}, {7, 1, 1, 4, 32}, {3, 2, 1, 4, 32},
      {5, 1, 1, 4, 64}, {5, 1, 2, 4, 64}, {5, 1, 4, 4, 64},
  };
  if (setting < 1 || setting > 6)
    throw UsageError("unknown setting " + std::to_string(setting) + " (expected 1-6)");
  const Row& r = table[setting - 1];
  return {r.ks, r.ds, r.e, r.h, r.dh, in_channels, out_channels, false};
}

/// Convolution kernel drawn from U(-a, a), a = sqrt(1 / fan_in), fan_in =
/// Ks * Ks * Cin; the weights (not the bias) are then scaled by `weight_gain`.
template <class T>
ConvKernel<T> init_conv_kernel(int ks, int cin, int cout, Rng& rng, double weight_gain = 1.0) {
  const std::size_t k = ks, ci = cin, co = cout;
  auto w = uniform_init<T>(Shape{k, k, ci, co}, k * k * ci, rng);
  if (weight_gain != 1.0)
    for (auto& v : w.values()) v = static_cast<T>(double(v) * weight_gain);
  return {Var<T>::parameter(std::move(w)),
          Var<T>::parameter(uniform_init<T>(Shape{1, 1, 1, co}, k * k * ci, rng))};
}

template <class T>
struct SAFDConvLayer {
  SAFDConvConfig config;
  OffsetNetworkParams<T> offset;
  ConvKernel<T> kernel;

  static SAFDConvLayer init(const SAFDConvConfig& cfg, Rng& rng, double weight_gain = 1.0) {
    cfg.validate();
    SAFDConvLayer l{cfg, OffsetNetworkParams<T>::init(cfg.offset_config(), rng), {}};
    l.kernel = init_conv_kernel<T>(cfg.kernel_size, cfg.in_channels, cfg.out_channels, rng,
                                   weight_gain);
    return l;
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    append(out, offset.parameters(), "offset.");
    out.push_back({"kernel.weight", kernel.weight});
    out.push_back({"kernel.bias", kernel.bias});
    return out;
  }
};

template <class T>
Var<T> safdconv_forward(const Var<T>& x, const SAFDConvLayer<T>& layer) {
  const auto& cfg = layer.config;
  if (x.shape().c != static_cast<std::size_t>(cfg.in_channels))
    throw ShapeError("safdconv: input has " + std::to_string(x.shape().c) +
                     " channels, layer expects " + std::to_string(cfg.in_channels));
  const Var<T> field = compute_displacement_field(x, layer.offset, cfg.offset_config());
  return conv2d(warp(x, field), layer.kernel, cfg.grid());
}

struct SAFDParamCount {
  std::size_t embed = 0, qkv = 0, output = 0, feedforward = 0, unembed = 0, kernel = 0;

  std::size_t offset_network() const { return embed + qkv + output + feedforward + unembed; }
  std::size_t total() const { return offset_network() + kernel; }
};

/// Closed-form parameter count of one layer.
inline SAFDParamCount param_count(const SAFDConvConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.in_channels, d = std::size_t(cfg.embed_multiplier) * c,
                    dh = cfg.hidden_dim, ks = cfg.kernel_size, co = cfg.out_channels;
  SAFDParamCount n;
  n.embed = c * d + d;
  n.qkv = 3 * (d * d + d);
  n.output = d * d + d;
  n.feedforward = d * dh + dh + dh * d + d;
  n.unembed = d * c + c;
  n.kernel = ks * ks * c * co + co;
  return n;
}

}  // namespace gdc
