// SPDX-License-Identifier: Apache-2.0
/**
 * @file   offset_network.hpp
 * @brief  Attention + feedforward network producing the channel-shared
 *         displacement field of a feature map.
 *
 * Pipeline for X of shape (B, H, W, C) with D = E * C:
 *
 *   tokens  = reshape(X, B, H*W, C)
 *   Xe      = tokens We + be                       (C -> D)
 *   Q, K, V = Xe Wq + bq, Xe Wk + bk, Xe Wv + bv   (D -> D)
 *   heads   = softmax(Q_i K_i^T / sqrt(D/h)) V_i   for each of h column blocks
 *   XA      = concat(heads) Wo + bo + Xe
 *   XF      = (XA W1 + b1) W2 + b2                 (D -> Dh -> D)
 *   Xhat    = (XF + XA) Wr + br                    (D -> C)
 *   field   = mean over m of reshape(Xhat, B, H, W, C/2, 2)[..., m, :]
 *
 * There is no positional encoding and no normalization, so the map from
 * tokens to field vectors is permutation-equivariant, and all-zero
 * parameters give the zero field.
 */
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gdcunet/kernels.hpp"
#include "gdcunet/ops.hpp"
#include "gdcunet/params.hpp"

namespace gdc {

struct OffsetNetConfig {
  int embed_multiplier = 1;  // E
  int heads = 4;             // h
  int hidden_dim = 32;       // Dh
  int channels = 2;          // C
  bool ff_activation = false;  // GELU between the two feedforward maps

  int model_dim() const { return embed_multiplier * channels; }
  int head_dim() const { return model_dim() / heads; }

  void validate() const {
    if (embed_multiplier < 1 || heads < 1 || hidden_dim < 1 || channels < 1)
      throw ConfigError("OffsetNetConfig: all sizes must be positive");
    if (channels % 2 != 0)
      throw ConfigError("OffsetNetConfig: channel count must be even, got " +
                        std::to_string(channels));
    if (model_dim() % heads != 0)
      throw ConfigError("OffsetNetConfig: model dim " + std::to_string(model_dim()) +
                        " not divisible by " + std::to_string(heads) + " heads");
  }
};

template <class T>
struct Linear {
  Var<T> weight;  // (1, 1, in, out)
  Var<T> bias;    // (1, 1, 1, out)

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return {Var<T>::parameter(uniform_init<T>(Shape{1, 1, in, out}, in, rng)),
            Var<T>::parameter(uniform_init<T>(Shape{1, 1, 1, out}, in, rng))};
  }
  static Linear zeros(std::size_t in, std::size_t out) {
    return {Var<T>::parameter(Tensor<T>(Shape{1, 1, in, out})),
            Var<T>::parameter(Tensor<T>(Shape{1, 1, 1, out}))};
  }
  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <class T>
struct OffsetNetworkParams {
  Linear<T> embed, query, key, value, output, ff1, ff2, unembed;

  static OffsetNetworkParams init(const OffsetNetConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t c = cfg.channels, d = cfg.model_dim(), dh = cfg.hidden_dim;
    OffsetNetworkParams p;
    p.embed = Linear<T>::init(c, d, rng);
    p.query = Linear<T>::init(d, d, rng);
    p.key = Linear<T>::init(d, d, rng);
    p.value = Linear<T>::init(d, d, rng);
    p.output = Linear<T>::init(d, d, rng);
    p.ff1 = Linear<T>::init(d, dh, rng);
    p.ff2 = Linear<T>::init(dh, d, rng);
    p.unembed = Linear<T>::init(d, c, rng);
    return p;
  }

  static OffsetNetworkParams zeros(const OffsetNetConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.channels, d = cfg.model_dim(), dh = cfg.hidden_dim;
    return {Linear<T>::zeros(c, d),  Linear<T>::zeros(d, d),  Linear<T>::zeros(d, d),
            Linear<T>::zeros(d, d),  Linear<T>::zeros(d, d),  Linear<T>::zeros(d, dh),
            Linear<T>::zeros(dh, d), Linear<T>::zeros(d, c)};
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    auto add = [&](const char* n, const Linear<T>& l) {
      out.push_back({std::string(n) + ".weight", l.weight});
      out.push_back({std::string(n) + ".bias", l.bias});
    };
    add("embed", embed);
    add("query", query);
    add("key", key);
    add("value", value);
    add("output", output);
    add("ff1", ff1);
    add("ff2", ff2);
    add("unembed", unembed);
    return out;
  }
};

/// softmax(Q K^T / sqrt(d)) for one head; Q and K are (1, 1, N, d) matrices.
template <class T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
  const std::size_t n = q.shape().w, d = q.shape().c;
  if (k.shape() != q.shape()) throw ShapeError("attention_weights: Q/K shape mismatch");
  Tensor<T> s(Shape{1, 1, n, n});
  kernels::gemm_nt(n, n, d, q.data(), k.data(), s.data());
  const T scale = T(1) / std::sqrt(T(d));
  for (auto& v : s.values()) v *= scale;
  detail::softmax_rows(n, n, s.data());
  return s;
}

namespace detail {

template <class T>
void copy_head(const T* src, std::size_t n, std::size_t dim, std::size_t col0, std::size_t hd,
               T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < hd; ++k) dst[i * hd + k] = src[i * dim + col0 + k];
}

template <class T>
void add_head(const T* src, std::size_t n, std::size_t dim, std::size_t col0, std::size_t hd,
              T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < hd; ++k) dst[i * dim + col0 + k] += src[i * hd + k];
}

}  // namespace detail

/// Multi-head scaled dot-product attention over the token axis. q, k, v are
/// (B, N, 1, D); the result is the concatenation of the h head outputs. The
/// attention matrices are recomputed in the backward pass rather than kept.
template <class T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
  const Shape s = q.shape();
  require_same_shape(s, k.shape(), "multi_head_attention");
  require_same_shape(s, v.shape(), "multi_head_attention");
  const std::size_t batch = s.b, n = s.h * s.w, dim = s.c, h = static_cast<std::size_t>(heads);
  if (h == 0 || dim % h != 0) throw ConfigError("multi_head_attention: bad head count");
  const std::size_t hd = dim / h;
  const T scale = T(1) / std::sqrt(T(hd));

  Tensor<T> out(s);
  std::vector<T> qh(n * hd), kh(n * hd), vh(n * hd), oh(n * hd), p(n * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t base = b * n * dim;
      detail::copy_head(q.value().data() + base, n, dim, i * hd, hd, qh.data());
      detail::copy_head(k.value().data() + base, n, dim, i * hd, hd, kh.data());
      detail::copy_head(v.value().data() + base, n, dim, i * hd, hd, vh.data());
      std::fill(p.begin(), p.end(), T(0));
      kernels::gemm_nt(n, n, hd, qh.data(), kh.data(), p.data());
      for (auto& x : p) x *= scale;
      detail::softmax_rows(n, n, p.data());
      std::fill(oh.begin(), oh.end(), T(0));
      kernels::gemm_nn(n, hd, n, p.data(), vh.data(), oh.data());
      detail::add_head(oh.data(), n, dim, i * hd, hd, out.data() + base);
    }

  return make_op<T>("multi_head_attention", std::move(out), {q, k, v},
                    [batch, n, dim, h, hd, scale](Node<T>& node) {
    std::vector<T> qh(n * hd), kh(n * hd), vh(n * hd), go(n * hd), p(n * n), dp(n * n),
        ds(n * n), gq(n * hd), gk(n * hd), gv(n * hd);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t base = b * n * dim;
        detail::copy_head(node.input(0).data() + base, n, dim, i * hd, hd, qh.data());
        detail::copy_head(node.input(1).data() + base, n, dim, i * hd, hd, kh.data());
        detail::copy_head(node.input(2).data() + base, n, dim, i * hd, hd, vh.data());
        detail::copy_head(node.grad.data() + base, n, dim, i * hd, hd, go.data());
        std::fill(p.begin(), p.end(), T(0));
        kernels::gemm_nt(n, n, hd, qh.data(), kh.data(), p.data());
        for (auto& x : p) x *= scale;
        detail::softmax_rows(n, n, p.data());

        std::fill(dp.begin(), dp.end(), T(0));
        kernels::gemm_nt(n, n, hd, go.data(), vh.data(), dp.data());
        std::fill(ds.begin(), ds.end(), T(0));
        detail::softmax_rows_backward(n, n, p.data(), dp.data(), ds.data());
        for (auto& x : ds) x *= scale;

        if (node.wants_grad(0)) {
          std::fill(gq.begin(), gq.end(), T(0));
          kernels::gemm_nn(n, hd, n, ds.data(), kh.data(), gq.data());
          detail::add_head(gq.data(), n, dim, i * hd, hd, node.input_grad(0).data() + base);
        }
        if (node.wants_grad(1)) {
          std::fill(gk.begin(), gk.end(), T(0));
          kernels::gemm_tn(n, hd, n, ds.data(), qh.data(), gk.data());
          detail::add_head(gk.data(), n, dim, i * hd, hd, node.input_grad(1).data() + base);
        }
        if (node.wants_grad(2)) {
          std::fill(gv.begin(), gv.end(), T(0));
          kernels::gemm_tn(n, hd, n, p.data(), go.data(), gv.data());
          detail::add_head(gv.data(), n, dim, i * hd, hd, node.input_grad(2).data() + base);
        }
      }
  });
}

/// (B, H, W, C) -> (B, H, W, 2): mean of the C/2 consecutive channel pairs.
template <class T>
Var<T> channel_pair_mean(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.c == 0 || s.c % 2 != 0)
    throw ConfigError("channel_pair_mean: channel count must be even, got " +
                      std::to_string(s.c));
  const std::size_t pairs = s.c / 2, pixels = s.b * s.h * s.w;
  const T inv = T(1) / T(pairs);
  Tensor<T> out(Shape{s.b, s.h, s.w, 2});
  const T* xv = x.value().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    T r = 0, c = 0;
    for (std::size_t m = 0; m < pairs; ++m) {
      r += xv[p * s.c + 2 * m];
      c += xv[p * s.c + 2 * m + 1];
    }
    out[2 * p] = r * inv;
    out[2 * p + 1] = c * inv;
  }
  return make_op<T>("channel_pair_mean", std::move(out), {x}, [pixels, pairs, inv](Node<T>& n) {
    T* gx = n.input_grad(0).data();
    const std::size_t c = 2 * pairs;
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t m = 0; m < pairs; ++m) {
        gx[p * c + 2 * m] += n.grad[2 * p] * inv;
        gx[p * c + 2 * m + 1] += n.grad[2 * p + 1] * inv;
      }
  });
}

/// Displacement field (B, H, W, 2) of a feature map, in pixels.
template <class T>
Var<T> compute_displacement_field(const Var<T>& x, const OffsetNetworkParams<T>& p,
                                  const OffsetNetConfig& cfg) {
  cfg.validate();
  const Shape s = x.shape();
  if (s.c != static_cast<std::size_t>(cfg.channels))
    throw ShapeError("compute_displacement_field: input has " + std::to_string(s.c) +
                     " channels, network expects " + std::to_string(cfg.channels));
  const Var<T> tokens = reshape(x, Shape{s.b, s.h * s.w, 1, s.c});
  const Var<T> xe = p.embed(tokens);
  const Var<T> attn = multi_head_attention(p.query(xe), p.key(xe), p.value(xe), cfg.heads);
  const Var<T> xa = add(p.output(attn), xe);
  Var<T> hidden = p.ff1(xa);
  if (cfg.ff_activation) hidden = gelu(hidden);
  const Var<T> xf = p.ff2(hidden);
  const Var<T> xhat = p.unembed(add(xf, xa));
  return channel_pair_mean(reshape(xhat, s));
}

}  // namespace gdc
